"""Inner airpath loop: feedforward actuator maps plus decoupled PI feedback.

EGR valve position corrects the EGR-rate error and VGT position corrects the
intake-pressure error. Integration is frozen while the command is saturated
in the direction the error pushes (conditional integration), and the
accumulators are clamped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .ident import LookupTable2D, lut_query
from .plant import ActuatorCommand, OperatingPoint


@dataclass(frozen=True)
class AirpathTargets:
    p_im_trg: float  # kPa
    chi_egr_trg: float  # fraction


@dataclass(frozen=True)
class InnerLoopGains:
    kp_chi: float = 40.0  # % open per unit EGR fraction
    ki_chi: float = 100.0  # % open per (fraction * s)
    kp_p: float = 0.8  # % closed per kPa
    ki_p: float = 1.0  # % closed per (kPa * s)
    dt: float = 0.2  # s, controller period
    integ_limit: float = 100.0  # % on each accumulator
    bandwidth: float = 1.0  # scales all gains

    def __post_init__(self):
        if self.dt <= 0 or self.integ_limit <= 0 or self.bandwidth <= 0:
            raise DomainError("dt, integ_limit and bandwidth must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "InnerLoopGains":
        return cls(**(d or {}))


@dataclass(frozen=True)
class InnerLoopState:
    integrators: tuple[float, float] = (0.0, 0.0)  # (egr, vgt) in %
    last_cmd: ActuatorCommand | None = None


def _pi_axis(ff, kp, ki, err, acc, dt, limit):
    acc_new = float(np.clip(acc + ki * err * dt, -limit, limit))
    raw = ff + kp * err + acc_new
    # integrate only up to the point where the command reaches its stop
    if raw > 100.0 and err > 0:
        acc_new = max(acc, min(acc_new, 100.0 - ff - kp * err))
    elif raw < 0.0 and err < 0:
        acc_new = min(acc, max(acc_new, -ff - kp * err))
    return float(np.clip(ff + kp * err + acc_new, 0.0, 100.0)), acc_new


def inner_loop_step(st: InnerLoopState, targets: AirpathTargets, meas: tuple[float, float],
                    op: OperatingPoint, egr_table: LookupTable2D, vgt_table: LookupTable2D,
                    gains: InnerLoopGains = InnerLoopGains()) -> tuple[InnerLoopState, ActuatorCommand]:
    """One controller tick. ``meas`` is the realized (p_im, chi_egr)."""
    p_im, chi = meas
    b = gains.bandwidth
    egr, acc_e = _pi_axis(lut_query(egr_table, op.n_e, op.w_inj), b * gains.kp_chi, b * gains.ki_chi,
                          targets.chi_egr_trg - chi, st.integrators[0], gains.dt, gains.integ_limit)
    vgt, acc_v = _pi_axis(lut_query(vgt_table, op.n_e, op.w_inj), b * gains.kp_p, b * gains.ki_p,
                          targets.p_im_trg - p_im, st.integrators[1], gains.dt, gains.integ_limit)
    cmd = ActuatorCommand(egr, vgt)
    return InnerLoopState((acc_e, acc_v), cmd), cmd


class InnerLoop:
    """Stateful wrapper owning one :class:`InnerLoopState`."""

    def __init__(self, egr_table: LookupTable2D, vgt_table: LookupTable2D,
                 gains: InnerLoopGains = InnerLoopGains()):
        self.egr_table = egr_table
        self.vgt_table = vgt_table
        self.gains = gains
        self.state = InnerLoopState()

    def feedforward(self, op: OperatingPoint) -> ActuatorCommand:
        return ActuatorCommand(lut_query(self.egr_table, op.n_e, op.w_inj),
                               lut_query(self.vgt_table, op.n_e, op.w_inj))

    def step(self, targets: AirpathTargets, meas: tuple[float, float], op: OperatingPoint) -> ActuatorCommand:
        self.state, cmd = inner_loop_step(self.state, targets, meas, op, self.egr_table,
                                          self.vgt_table, self.gains)
        return cmd


__all__ = ["AirpathTargets", "InnerLoopGains", "InnerLoopState", "inner_loop_step", "InnerLoop"]
