"""Rate-based economic MPC over the recurrent emissions model.

Decision variables are the input increments over the horizon plus one
nonnegative slack per predicted Soot sample. Each control step solves

    min  sum_{j=0..N} l(du_j, eps_j, x_j, u_j)
    s.t. x_{j+1} = f(x_j, u_j),  u_j = u_{j-1} + du_j,
         Soot_j <= soot_lim + eps_j,  eps_j >= 0,
         fuel_lower_frac * w_trg <= w_j <= w_trg,
         static boxes on p_im / chi_egr and per-step rate limits on both,

with ``l = alpha (p_trg - p)^2 + beta (chi_trg - chi)^2 + gamma (w_trg - w)
+ eta NOx + zeta eps + du' R du``. The terminal stage repeats the last input
with a zero increment. The problem is solved by SQP: the quadratic tracking
and damping terms are kept exact, NOx and Soot are linearized through the
horizon sensitivities, and each QP step is globalized with a backtracking
line search on an l1 merit function.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, NumericError, StructuralError
from .nn import EmissionsState, NnParams, rnn_horizon_jacobians, rnn_step_array
from .qp import QPError, solve_qp

STATUSES = ("converged", "max_iter", "infeasible_restored")


@dataclass(frozen=True)
class ControlInput:
    p_im_adj: float  # kPa
    chi_egr_adj: float  # fraction
    w_inj_adj: float  # mg/stroke

    def as_array(self) -> np.ndarray:
        return np.array([self.p_im_adj, self.chi_egr_adj, self.w_inj_adj])

    @classmethod
    def from_array(cls, a) -> "ControlInput":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class Targets:
    """Lookup-table references at the current operating point."""

    p_im_trg: float
    chi_egr_trg: float
    w_inj_trg: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_im_trg, self.chi_egr_trg, self.w_inj_trg])


@dataclass(frozen=True)
class ExtendedState:
    """``[delta_x; x_prev; u_prev]`` with u ordered (p_im_adj, chi_egr_adj, w_inj_adj)."""

    delta_x: np.ndarray  # (2,)
    x_prev: np.ndarray  # (2,)
    u_prev: np.ndarray  # (3,)

    def __post_init__(self):
        for name, n in (("delta_x", 2), ("x_prev", 2), ("u_prev", 3)):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise StructuralError(f"{name} must have {n} entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def x(self) -> np.ndarray:
        """Current state ``x_prev + delta_x``."""
        return self.x_prev + self.delta_x


def rnn_input(u: np.ndarray, n_e: float) -> np.ndarray:
    """Model input row [p_im, chi_egr, n_e, w_inj] from a control vector."""
    return np.array([u[0], u[1], n_e, u[2]])


def extended_dynamics(rnn: NnParams, xe: ExtendedState, du, n_e: float, step: int = 0) -> ExtendedState:
    """Three-block update of the rate-based state."""
    x = xe.x_prev + xe.delta_x
    u = xe.u_prev + np.asarray(du, dtype=float)
    try:
        x_next = rnn_step_array(rnn, x, rnn_input(u, n_e))
    except NumericError as exc:
        raise NumericError(f"step {step}: {exc}") from exc
    if not np.all(np.isfinite(x_next)):
        raise NumericError(f"step {step}: non-finite state")
    return ExtendedState(x_next - x, x, u)


@dataclass(frozen=True)
class OcpConfig:
    N: int = 8
    alpha: float = 0.15
    beta: float = 16000.0
    gamma: float = 20.0
    eta: float = 0.1
    zeta: float = 200.0
    R: tuple[float, float, float] = (0.05, 2000.0, 0.01)  # diagonal damping on (dp, dchi, dw)
    soot_lim: float | None = None  # %, None disables the Soot constraint
    fuel_lower_frac: float = 0.9
    p_im_bounds: tuple[float, float] = (100.0, 400.0)
    chi_egr_bounds: tuple[float, float] = (0.0, 0.5)
    dp_im_max: float = 40.0  # kPa per step
    dchi_egr_max: float = 0.1  # per step
    scale: tuple[float, float, float] = (10.0, 0.05, 10.0)
    slack_reg: float = 1e-6
    kkt_tol: float = 1e-6
    max_iter: int = 20
    qp_max_iter: int = 200
    time_budget: float = 0.2  # s wall clock per solve
    line_search_beta: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if self.N < 1:
            raise DomainError("horizon N must be >= 1")
        if min(self.alpha, self.beta, self.gamma, self.zeta) <= 0 or self.eta < 0:
            raise DomainError("alpha, beta, gamma, zeta must be positive and eta non-negative")
        if len(self.R) != 3 or min(self.R) <= 0:
            raise DomainError("R must be a positive diagonal of length 3")
        if not 0 < self.fuel_lower_frac <= 1:
            raise DomainError("fuel_lower_frac must lie in (0, 1]")
        if self.p_im_bounds[0] >= self.p_im_bounds[1] or self.chi_egr_bounds[0] >= self.chi_egr_bounds[1]:
            raise DomainError("empty input box")
        if not (0 <= self.chi_egr_bounds[0] and self.chi_egr_bounds[1] <= 1):
            raise DomainError("chi_egr bounds must lie in [0, 1]")
        if self.dp_im_max <= 0 or self.dchi_egr_max <= 0:
            raise DomainError("rate limits must be positive")
        object.__setattr__(self, "R", tuple(float(r) for r in self.R))
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "p_im_bounds", tuple(float(v) for v in self.p_im_bounds))
        object.__setattr__(self, "chi_egr_bounds", tuple(float(v) for v in self.chi_egr_bounds))

    @classmethod
    def from_dict(cls, d: dict | None) -> "OcpConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise StructuralError(f"unknown OCP config keys: {sorted(unknown)}")
        for k in ("R", "p_im_bounds", "chi_egr_bounds", "scale"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def stage_cost(du, eps: float, xe_next: ExtendedState, targets: Targets, cfg: OcpConfig) -> float:
    """Stage cost on the input ``u_j = xe_next.u_prev`` and state ``x_j = xe_next.x_prev``."""
    du = np.asarray(du, dtype=float)
    u = xe_next.u_prev
    nox = xe_next.x_prev[0]
    return float(cfg.alpha * (targets.p_im_trg - u[0]) ** 2
                 + cfg.beta * (targets.chi_egr_trg - u[1]) ** 2
                 + cfg.gamma * (targets.w_inj_trg - u[2])
                 + cfg.eta * nox + cfg.zeta * eps
                 + du @ (np.asarray(cfg.R) * du))


@dataclass(frozen=True)
class OcpSolution:
    delta_u_seq: np.ndarray  # (N, 3) physical increments
    slack_seq: np.ndarray  # (N,) for predicted samples 1..N
    x_pred: np.ndarray  # (N, 2) predicted states 1..N
    objective: float
    status: str
    iterations: int
    kkt_residual: float
    solve_time: float = 0.0
    budget_exhausted: bool = False
    qp_active: tuple[int, ...] = ()
    merit_history: tuple[float, ...] = ()

    @property
    def first_move(self) -> np.ndarray:
        return self.delta_u_seq[0]

    @property
    def max_slack(self) -> float:
        return float(np.max(self.slack_seq)) if len(self.slack_seq) else 0.0


class _Problem:
    """Dense matrices of one OCP instance in scaled increment coordinates."""

    def __init__(self, rnn: NnParams, x0, u_prev, n_e: float, targets: Targets, cfg: OcpConfig):
        self.rnn, self.cfg, self.n_e, self.targets = rnn, cfg, n_e, targets
        self.x0 = np.asarray(x0, dtype=float)
        self.u_prev = np.asarray(u_prev, dtype=float)
        n = cfg.N
        self.n = n
        self.ns = 3 * n
        self.nz = 4 * n
        self.D = np.asarray(cfg.scale)
        tril = np.tril(np.ones((n, n)))
        self.L = np.kron(tril, np.diag(self.D))  # u_stack = u_prev + L s
        c = np.ones(n)
        c[-1] = 2.0  # terminal stage repeats u_{N-1}
        self.c = c
        q = np.kron(np.diag(c), np.diag([cfg.alpha, cfg.beta, 0.0]))
        rs = np.kron(np.eye(n), np.diag(np.asarray(cfg.R) * self.D ** 2))
        H = np.zeros((self.nz, self.nz))
        H[:self.ns, :self.ns] = 2.0 * self.L.T @ q @ self.L + 2.0 * rs
        H[self.ns:, self.ns:] = cfg.slack_reg * np.eye(n)
        self.H = 0.5 * (H + H.T)
        trg = np.tile([targets.p_im_trg, targets.chi_egr_trg, 0.0], n)
        fuel_w = np.kron(c, [0.0, 0.0, 1.0])
        g = np.zeros(self.nz)
        g[:self.ns] = -2.0 * self.L.T @ q @ (trg - np.tile(self.u_prev, n)) - cfg.gamma * self.L.T @ fuel_w
        g[self.ns:] = cfg.zeta
        self.g_fixed = g
        self._linear_rows()

    # -- linear constraints (independent of the model) --
    def _linear_rows(self):
        cfg, n, D = self.cfg, self.n, self.D
        rows, rhs = [], []
        up = np.tile(self.u_prev, n)
        lo = np.tile([cfg.p_im_bounds[0], cfg.chi_egr_bounds[0], cfg.fuel_lower_frac * self.targets.w_inj_trg], n)
        hi = np.tile([cfg.p_im_bounds[1], cfg.chi_egr_bounds[1], self.targets.w_inj_trg], n)
        Lz = np.hstack([self.L, np.zeros((self.ns, n))])
        rows += [Lz, -Lz]
        rhs += [hi - up, up - lo]
        rate = np.tile([cfg.dp_im_max / D[0], cfg.dchi_egr_max / D[1]], n)
        sel = np.zeros((2 * n, self.nz))
        for j in range(n):
            sel[2 * j, 3 * j] = 1.0
            sel[2 * j + 1, 3 * j + 1] = 1.0
        rows += [sel, -sel]
        rhs += [rate, rate]
        neg_eps = np.zeros((n, self.nz))
        neg_eps[:, self.ns:] = -np.eye(n)
        rows.append(neg_eps)
        rhs.append(np.zeros(n))
        self.A_lin = np.vstack(rows)
        self.b_lin = np.concatenate(rhs)

    def inputs(self, z: np.ndarray) -> np.ndarray:
        """(N, 3) absolute inputs u_0..u_{N-1}."""
        return (np.tile(self.u_prev, self.n) + self.L @ z[:self.ns]).reshape(self.n, 3)

    def rollout(self, z: np.ndarray, with_sens: bool):
        u = self.inputs(z)
        useq = np.column_stack([u[:, 0], u[:, 1], np.full(self.n, self.n_e), u[:, 2]])
        sens = rnn_horizon_jacobians(self.rnn, self.x0, useq)
        if not with_sens:
            return sens.states, None
        # d x_{j+1} / d s_m = sum_{i=m..j} du[j, i] D
        du = sens.du[:, :, :, [0, 1, 3]] * self.D  # (N, N, 2, 3)
        cum = np.cumsum(du[:, ::-1], axis=1)[:, ::-1]  # cum[j, m] = sum_{i>=m} du[j, i]
        jac = np.transpose(cum, (0, 2, 1, 3)).reshape(self.n, 2, self.ns)
        return sens.states, jac

    def objective(self, z: np.ndarray, states: np.ndarray, reg: bool = True) -> float:
        cfg, t = self.cfg, self.targets
        u = self.inputs(z)
        s = z[:self.ns].reshape(self.n, 3) * self.D
        eps = z[self.ns:]
        track = (cfg.alpha * (t.p_im_trg - u[:, 0]) ** 2 + cfg.beta * (t.chi_egr_trg - u[:, 1]) ** 2
                 + cfg.gamma * (t.w_inj_trg - u[:, 2]))
        total = float(np.sum(self.c * track))
        total += float(np.sum(s * s * np.asarray(cfg.R)))
        total += cfg.eta * (self.x0[0] + float(np.sum(states[:, 0])))
        total += cfg.zeta * float(np.sum(eps))
        if reg:
            total += 0.5 * cfg.slack_reg * float(eps @ eps)
        return total

    def merit(self, z: np.ndarray, states: np.ndarray, mu: float) -> float:
        return self.objective(z, states) + mu * float(np.sum(self.soot_violation(z, states)))

    def soot_violation(self, z: np.ndarray, states: np.ndarray) -> np.ndarray:
        if self.cfg.soot_lim is None:
            return np.zeros(self.n)
        return np.maximum(states[:, 1] - self.cfg.soot_lim - z[self.ns:], 0.0)

    def project(self, z: np.ndarray) -> np.ndarray:
        """Sequential clipping of the input trajectory onto rate limits and boxes."""
        cfg, D = self.cfg, self.D
        s = z[:self.ns].reshape(self.n, 3) * D
        lo = np.array([cfg.p_im_bounds[0], cfg.chi_egr_bounds[0], cfg.fuel_lower_frac * self.targets.w_inj_trg])
        hi = np.array([cfg.p_im_bounds[1], cfg.chi_egr_bounds[1], self.targets.w_inj_trg])
        rate = np.array([cfg.dp_im_max, cfg.dchi_egr_max, np.inf])
        u = self.u_prev.copy()
        out = np.empty_like(s)
        for j in range(self.n):
            step = np.clip(s[j], -rate, rate)
            u_new = np.clip(u + step, lo, hi)
            out[j] = u_new - u
            u = u_new
        zz = z.copy()
        zz[:self.ns] = (out / D).ravel()
        zz[self.ns:] = np.maximum(zz[self.ns:], 0.0)
        return zz


def _shift_warm(warm: OcpSolution, n: int) -> np.ndarray:
    du = np.asarray(warm.delta_u_seq)
    eps = np.asarray(warm.slack_seq)
    if len(du) != n:
        return np.zeros((n, 3)), np.zeros(n)
    return np.vstack([du[1:], du[-1:]]), np.concatenate([eps[1:], eps[-1:]])


def _same_warm(warm: OcpSolution, n: int):
    if len(warm.delta_u_seq) != n:
        return np.zeros((n, 3)), np.zeros(n)
    return np.asarray(warm.delta_u_seq, dtype=float), np.asarray(warm.slack_seq, dtype=float)


def _best_start(prob: "_Problem", starts, mu: float) -> np.ndarray:
    """Projected candidate with the lowest merit; a candidate that cannot be rolled out is skipped."""
    best, best_phi = None, math.inf
    for du0, eps0 in starts:
        z = prob.project(np.concatenate([(du0 / prob.D).ravel(), eps0]))
        if len(starts) == 1:
            return z
        try:
            states, _ = prob.rollout(z, False)
        except NumericError:
            continue
        phi = prob.merit(z, states, mu)
        if phi < best_phi:
            best, best_phi = z, phi
    return best if best is not None else prob.project(np.zeros(prob.nz))


def solve_ocp(rnn: NnParams, x_meas, x_prev_meas, u_prev, op, targets: Targets, cfg: OcpConfig,
              warm: OcpSolution | None = None, clock=time.perf_counter) -> OcpSolution:
    """SQP solve of one OCP instance; never raises on solver trouble."""
    t_start = clock()
    xe0 = ExtendedState(np.asarray(_arr(x_meas)) - _arr(x_prev_meas), _arr(x_prev_meas), _arr(u_prev))
    n_e = float(op.n_e)
    prob = _Problem(rnn, xe0.x, xe0.u_prev, n_e, targets, cfg)
    mu = 2.0 * cfg.zeta + 1.0
    starts = [(np.zeros((cfg.N, 3)), np.zeros(cfg.N))]
    if warm is not None:
        # the shifted plan suits the next control step; the unshifted one a re-solve of the same instance
        starts = [_shift_warm(warm, cfg.N), _same_warm(warm, cfg.N)]
    z = _best_start(prob, starts, mu)
    status, it, kkt, active = "max_iter", 0, math.inf, warm.qp_active if warm is not None else ()
    budget_exhausted = False
    merits: list[float] = []
    t_iter, slowest = clock(), 0.0
    try:
        states, jac = prob.rollout(z, True)
        for it in range(1, cfg.max_iter + 1):
            # absorb any nonlinear Soot violation into the slacks (lowers the merit since mu > zeta)
            if cfg.soot_lim is not None:
                z[prob.ns:] = np.maximum(z[prob.ns:], states[:, 1] - cfg.soot_lim)
            f0 = prob.objective(z, states)
            merits.append(f0)
            g = prob.g_fixed.copy()
            g[:prob.ns] += cfg.eta * jac[:, 0, :].sum(axis=0)
            A, b = prob.A_lin, prob.b_lin
            if cfg.soot_lim is not None:
                rows = np.zeros((prob.n, prob.nz))
                rows[:, :prob.ns] = jac[:, 1, :]
                rows[:, prob.ns:] = -np.eye(prob.n)
                A = np.vstack([A, rows])
                b = np.concatenate([b, cfg.soot_lim - states[:, 1] + jac[:, 1, :] @ z[:prob.ns]])
            qp = solve_qp(prob.H, g, A, b, z, active, max_iter=cfg.qp_max_iter)
            active = qp.active
            p = qp.z - z
            kkt = float(np.max(np.abs(prob.H @ p)))
            model_decrease = float(0.5 * z @ prob.H @ z + g @ z) - qp.objective
            if kkt <= cfg.kkt_tol * (1.0 + float(np.max(np.abs(g)))) or model_decrease <= 1e-12 * (1.0 + abs(f0)):
                st_try, _ = prob.rollout(qp.z, False)
                if prob.merit(qp.z, st_try, mu) <= f0:
                    z, states = qp.z, st_try
                status = "converged"
                break
            alpha = 1.0
            while True:
                z_try = z + alpha * p
                st_try, _ = prob.rollout(z_try, False)
                phi = prob.merit(z_try, st_try, mu)
                if phi <= f0 - cfg.armijo * alpha * model_decrease or alpha < 1e-6:
                    break
                alpha *= cfg.line_search_beta
            if alpha < 1e-6 and phi > f0:
                status = "converged"  # no descent available along the QP direction
                break
            z = z_try
            states, jac = prob.rollout(z, True)
            now = clock()
            slowest = max(slowest, now - t_iter)
            t_iter = now
            # anytime contract: stop if another iteration would overrun the budget
            if now - t_start + slowest > cfg.time_budget:
                budget_exhausted = True
                break
    except (QPError, NumericError, np.linalg.LinAlgError):
        return _restored(prob, cfg, clock() - t_start, it)
    if cfg.soot_lim is not None:
        z[prob.ns:] = np.maximum(z[prob.ns:], states[:, 1] - cfg.soot_lim)
    merits.append(prob.objective(z, states))
    obj = prob.objective(z, states, reg=False)
    du = z[:prob.ns].reshape(cfg.N, 3) * prob.D
    return OcpSolution(du, z[prob.ns:].copy(), states.copy(), obj, status, it, kkt,
                       clock() - t_start, budget_exhausted, tuple(active), tuple(merits))


def _arr(v) -> np.ndarray:
    return v.as_array() if hasattr(v, "as_array") else np.asarray(
        [v.nox, v.soot] if isinstance(v, EmissionsState) else v, dtype=float)


def _restored(prob: _Problem, cfg: OcpConfig, elapsed: float, it: int) -> OcpSolution:
    z = np.zeros(prob.nz)
    try:
        states, _ = prob.rollout(z, False)
        obj = prob.objective(z, states)
    except NumericError:
        states, obj = np.full((cfg.N, 2), np.nan), math.nan
    return OcpSolution(np.zeros((cfg.N, 3)), np.zeros(cfg.N), states, obj, "infeasible_restored",
                       it, math.nan, elapsed)


# --- closed-loop controller ----------------------------------------------------

DIAGNOSTIC_COLUMNS = ("step", "status", "iterations", "objective", "max_slack", "kkt_residual",
                      "solve_time", "budget_exhausted")


class EmpcController:
    """Holds u_{k-1}, x_{k-1} and the previous solution between control steps."""

    def __init__(self, rnn: NnParams, cfg: OcpConfig):
        self.rnn = rnn
        self.cfg = cfg
        self.u_prev: np.ndarray | None = None
        self.x_prev: np.ndarray | None = None
        self.warm: OcpSolution | None = None
        self.diagnostics: list[dict] = []

    def reset(self):
        self.u_prev = self.x_prev = self.warm = None
        self.diagnostics = []

    def _box(self, u: np.ndarray, targets: Targets) -> np.ndarray:
        cfg = self.cfg
        return np.array([np.clip(u[0], *cfg.p_im_bounds), np.clip(u[1], *cfg.chi_egr_bounds),
                         np.clip(u[2], cfg.fuel_lower_frac * targets.w_inj_trg, targets.w_inj_trg)])

    def step(self, x_meas, op, targets: Targets) -> tuple[ControlInput, OcpSolution]:
        return empc_step(self, x_meas, op, targets)


def empc_step(ctrl: EmpcController, x_meas, op, targets: Targets) -> tuple[ControlInput, OcpSolution]:
    """Solve the OCP and apply the first increment: ``u_k = u_{k-1} + du*_0``."""
    x = _arr(x_meas)
    if ctrl.u_prev is None:
        ctrl.u_prev = ctrl._box(targets.as_array(), targets)
        ctrl.x_prev = x.copy()
    # p_im / chi_egr boxes are static; the fuel box moves with the target and applies from u_0 on
    u_prev = ctrl.u_prev.copy()
    u_prev[:2] = ctrl._box(u_prev, targets)[:2]
    sol = solve_ocp(ctrl.rnn, x, ctrl.x_prev, u_prev, op, targets, ctrl.cfg, ctrl.warm)
    u = ctrl._box(u_prev + sol.first_move, targets)
    ctrl.u_prev = u
    ctrl.x_prev = x.copy()
    ctrl.warm = sol if sol.status != "infeasible_restored" else None
    ctrl.diagnostics.append({
        "step": len(ctrl.diagnostics), "status": sol.status, "iterations": sol.iterations,
        "objective": sol.objective, "max_slack": sol.max_slack, "kkt_residual": sol.kkt_residual,
        "solve_time": sol.solve_time, "budget_exhausted": int(sol.budget_exhausted)})
    return ControlInput.from_array(u), sol


def write_diagnostics_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DIAGNOSTIC_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


# --- scenario presets ----------------------------------------------------------

ETA_LOW = 0.1
ETA_HIGH = 1.0


def scenario_preset(tag: str, base: OcpConfig, soot_lim: float | None,
                    eta_low: float = ETA_LOW, eta_high: float = ETA_HIGH) -> OcpConfig:
    """A: low eta, no Soot limit. B: high eta, no limit. C: low eta with limit. D: high eta with limit."""
    table = {"A": (eta_low, None), "B": (eta_high, None), "C": (eta_low, soot_lim), "D": (eta_high, soot_lim)}
    if tag not in table:
        raise DomainError(f"unknown EMPC scenario {tag!r}")
    eta, lim = table[tag]
    if tag in ("C", "D") and lim is None:
        raise DomainError(f"scenario {tag} needs a Soot limit")
    return replace(base, eta=eta, soot_lim=lim)


__all__ = ["ControlInput", "Targets", "ExtendedState", "OcpConfig", "OcpSolution", "EmpcController",
           "extended_dynamics", "stage_cost", "solve_ocp", "empc_step", "scenario_preset",
           "write_diagnostics_csv", "rnn_input", "STATUSES", "ETA_LOW", "ETA_HIGH"]
