"""One economic MPC solve on a hand-built linear emissions model.

NOx falls as the EGR rate rises, so the NOx weight eta trades tracking of the
EGR-rate target against emissions. A Soot model that grows with EGR rate and a
Soot limit then cap how far the optimizer can go.
"""
# %%
import numpy as np

from dieselempc.empc import OcpConfig, Targets, solve_ocp
from dieselempc.nn import Layer, NnParams, Normalization
from dieselempc.plant import OperatingPoint


def linear_model(a=0.6, b=-400.0, c=200.0, soot_gain=4.0):
    """nox' = a nox + b chi + c and soot' = soot_gain chi, as a one-layer identity network."""
    w = np.array([[a, 0, 0, b, 0, 0], [0, 0, 0, soot_gain, 0, 0]], dtype=float)
    return NnParams((Layer(w, [c, 0.0], "identity"),), Normalization.identity(6, 2))


net = linear_model()
op = OperatingPoint(1500.0, 50.0)
trg = Targets(150.0, 0.2, 50.0)
u_prev = trg.as_array()
x = [300.0, 0.8]

# %% Sweep the NOx weight
print(" eta   chi_adj   predicted NOx sum   status     iters")
for eta in (0.0, 0.1, 0.5, 1.0, 2.0, 5.0):
    sol = solve_ocp(net, x, x, u_prev, op, trg, OcpConfig(eta=eta))
    print(f"{eta:4.1f}   {u_prev[1] + sol.first_move[1]:.4f}    {sol.x_pred[:, 0].sum():10.1f}        "
          f"{sol.status:9s}  {sol.iterations}")

# %% Add a Soot limit: the slack stays at zero and EGR rate is held back
for lim in (None, 1.0, 0.85):
    sol = solve_ocp(net, x, x, u_prev, op, trg, OcpConfig(eta=2.0, soot_lim=lim, zeta=1e5))
    print(f"soot_lim {lim!s:>5}: peak predicted Soot {sol.x_pred[:, 1].max():.3f}, "
          f"max slack {sol.max_slack:.1e}, first chi move {sol.first_move[1]:+.4f}")

# %% Fuel is never raised above its target and never cut by more than 10 %
sol = solve_ocp(net, x, x, u_prev, op, trg, OcpConfig(eta=5.0))
w = u_prev[2] + np.cumsum(sol.delta_u_seq[:, 2])
print(f"\nplanned fuel range {w.min():.2f} .. {w.max():.2f} mg/stroke (target {trg.w_inj_trg})")
