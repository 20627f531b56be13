"""Airpath plant and inner tracking loop.

Run with ``python3 demos/01_airpath_inner_loop.py``.
"""
# %%
import numpy as np

from dieselempc.config import load_config
from dieselempc.inner_loop import AirpathTargets, InnerLoop
from dieselempc.plant import ActuatorCommand, Airpath, OperatingPoint

cfg = load_config()
ap = Airpath(cfg.plant)
op = OperatingPoint(1500.0, 60.0)

# %% Equilibrium of the plant at the feedforward actuator positions
loop = InnerLoop(cfg.tables["egr_pos"], cfg.tables["vgt_pos"], cfg.inner_gains)
ff = loop.feedforward(op)
s = ap.steady_state(ff, op)
print(f"feedforward EGR {ff.egr_pos:.1f} %, VGT {ff.vgt_pos:.1f} %")
print(f"  p_im {s[0]:.1f} kPa, p_ex {s[1]:.1f} kPa, chi_egr {ap.chi_egr(s):.3f}")

# %% Ask for a different, reachable set-point: the equilibrium of offset actuators
target_state = ap.steady_state(ActuatorCommand(ff.egr_pos + 6.0, ff.vgt_pos + 5.0), op)
trg = AirpathTargets(float(target_state[0]), ap.chi_egr(target_state))
print(f"\ntarget p_im {trg.p_im_trg:.1f} kPa, chi_egr {trg.chi_egr_trg:.3f}")

dt, substeps = cfg.inner_gains.dt, 4
print(" t [s]   p_im    chi_egr   EGR %   VGT %")
for k in range(50):
    cmd = loop.step(trg, (s[0], ap.chi_egr(s)), op)
    for _ in range(substeps):
        s = ap.step_array(s, cmd, op, dt / substeps)
    if k % 5 == 4:
        print(f"{(k + 1) * dt:5.1f}  {s[0]:6.1f}   {ap.chi_egr(s):.4f}   {cmd.egr_pos:5.1f}   {cmd.vgt_pos:5.1f}")

# %% The integrators absorb the actuator offsets, so the error goes to zero
print(f"\nfinal error: {s[0] - trg.p_im_trg:+.2e} kPa, {ap.chi_egr(s) - trg.chi_egr_trg:+.2e}")
print("integrator states:", np.round(loop.state.integrators, 3))
