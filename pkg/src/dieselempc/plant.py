"""Surrogate diesel airpath, ground-truth emissions map and the plant-side
emissions head.

The airpath is a five-state mean-value model: intake and exhaust manifold
pressures (isothermal filling), turbocharger speed (first-order lag towards a
turbine-power dependent equilibrium) and first-order lagged EGR and compressor
flows. Orifice flows use a smooth regularized square-root law so the
right-hand side is C-infinity away from the safety clamps.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, StructuralError
from .nn import EmissionsState, FnnInput, NnParams, fnn_forward

log = logging.getLogger(__name__)

R_AIR = 287.0
KG_S_TO_KG_H = 3600.0


@dataclass(frozen=True)
class AirpathState:
    p_im: float  # kPa
    p_ex: float  # kPa
    turbo_speed: float  # krpm
    w_egr: float  # kg/h
    w_c: float  # kg/h

    def as_array(self) -> np.ndarray:
        return np.array([self.p_im, self.p_ex, self.turbo_speed, self.w_egr, self.w_c])

    @classmethod
    def from_array(cls, a) -> "AirpathState":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class ActuatorCommand:
    egr_pos: float  # % open
    vgt_pos: float  # % closed

    def clamped(self) -> "ActuatorCommand":
        return ActuatorCommand(float(np.clip(self.egr_pos, 0.0, 100.0)),
                               float(np.clip(self.vgt_pos, 0.0, 100.0)))


@dataclass(frozen=True)
class OperatingPoint:
    n_e: float  # rpm
    w_inj: float  # mg/stroke


@dataclass(frozen=True)
class EmissionsMapCoeffs:
    """Coefficients of the synthetic ground-truth emissions map."""

    nox_ref: float = 1400.0  # ppm at reference load, zero dilution
    nox_fuel_exp: float = 0.75
    nox_dilution: float = 5.0
    nox_egr_pos: float = 0.12
    nox_o2: float = 1.1
    nox_timing: float = 0.03
    nox_speed: float = 0.15
    soot_ref: float = 1.6  # % at lambda = lambda_ref, reference fuel
    soot_lambda_ref: float = 1.6
    soot_slope: float = 3.0
    soot_dilution: float = 1.5
    soot_timing: float = 0.02
    noise_rel: float = 0.02


@dataclass(frozen=True)
class PlantConfig:
    p_amb: float = 101.3  # kPa
    t_amb: float = 298.0  # K
    t_im: float = 320.0  # K
    displacement: float = 6.7e-3  # m^3
    n_cyl: int = 6
    eta_v: float = 0.88
    v_im: float = 0.03  # m^3
    v_ex: float = 0.03  # m^3
    a_egr_max: float = 4.0e-4  # m^2 effective
    a_turb_max: float = 4.5e-4  # m^2 effective
    vgt_area_frac: float = 0.75  # fraction of turbine area removed at 100 % closed
    a_comp: float = 1.0e-3  # m^2 effective
    dp_reg: float = 2.0  # kPa, orifice regularization
    cp_ex: float = 1150.0  # J/(kg K)
    kappa_ex: float = 1.34
    lhv: float = 42.5e6  # J/kg
    exhaust_energy_frac: float = 0.33
    eta_turb: float = 0.65
    eta_comp: float = 0.70
    cp_air: float = 1005.0
    kappa_air: float = 1.4
    w_comp_min: float = 20.0  # kg/h, floor in the power balance
    pr_gain: float = 1.0e-4  # compressor pressure-ratio rise per krpm^2
    tau_turbo: float = 0.6  # s
    tau_egr: float = 0.1  # s
    tau_comp: float = 0.1  # s
    n_idle: float = 700.0  # rpm
    n_max: float = 2400.0  # rpm
    w_inj_max: float = 160.0  # mg/stroke
    afr_stoich: float = 14.5
    emissions: EmissionsMapCoeffs = field(default_factory=EmissionsMapCoeffs)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PlantConfig":
        d = dict(d or {})
        em = EmissionsMapCoeffs(**d.pop("emissions", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise StructuralError(f"unknown plant config keys: {sorted(unknown)}")
        return cls(emissions=em, **d)

    def to_dict(self) -> dict:
        return asdict(self)


def egr_rate(w_egr: float, w_c: float) -> float:
    """EGR fraction of the total intake flow; 0 when both flows vanish."""
    if w_egr < 0 or w_c < 0:
        raise DomainError("flows must be non-negative")
    total = w_egr + w_c
    if total == 0.0:
        log.debug("egr_rate: zero total flow, returning 0")
        return 0.0
    return w_egr / total


def _orifice(dp_kpa, reg_kpa):
    # dp / (dp^2 + reg^2)^(1/4): linear near zero, sqrt-like far away
    return dp_kpa / (dp_kpa * dp_kpa + reg_kpa * reg_kpa) ** 0.25


class Airpath:
    """Mean-value airpath right-hand side and integrator for one config."""

    STATE_LO = np.array([0.5, 0.5, 0.0, 0.0, 0.0])  # p scaled by p_amb below
    STATE_HI = np.array([450.0, 600.0, 250.0, 2000.0, 4000.0])

    def __init__(self, cfg: PlantConfig | None = None):
        self.cfg = cfg or PlantConfig()
        self.clamp_events = 0

    # static relations -------------------------------------------------------
    def cylinder_flow(self, p_im: float, n_e: float) -> float:
        c = self.cfg
        return c.eta_v * p_im * 1e3 * c.displacement * n_e / (120.0 * R_AIR * c.t_im) * KG_S_TO_KG_H

    def fuel_flow(self, w_inj: float, n_e: float) -> float:
        """Fuel mass flow in kg/h."""
        return w_inj * 1e-6 * self.cfg.n_cyl * n_e / 120.0 * KG_S_TO_KG_H

    def exhaust_temperature(self, w_cyl: float, w_f: float) -> float:
        c = self.cfg
        return c.t_im + c.exhaust_energy_frac * c.lhv * w_f / (c.cp_ex * max(w_cyl + w_f, 1e-9))

    def turbine_flow(self, p_ex: float, t_ex: float, vgt_pos: float) -> float:
        c = self.cfg
        area = c.a_turb_max * (1.0 - c.vgt_area_frac * vgt_pos / 100.0)
        rho = p_ex * 1e3 / (R_AIR * t_ex)
        return area * np.sqrt(2.0 * rho * 1e3) * _orifice(p_ex - c.p_amb, c.dp_reg) * KG_S_TO_KG_H

    def egr_flow_target(self, p_im: float, p_ex: float, t_ex: float, egr_pos: float) -> float:
        c = self.cfg
        rho = p_ex * 1e3 / (R_AIR * t_ex)
        w = c.a_egr_max * egr_pos / 100.0 * np.sqrt(2.0 * rho * 1e3) * _orifice(p_ex - p_im, c.dp_reg)
        return max(w * KG_S_TO_KG_H, 0.0)

    def turbine_power(self, w_t: float, t_ex: float, p_ex: float) -> float:
        """kW."""
        c = self.cfg
        pr = c.p_amb / max(p_ex, c.p_amb * 0.5)
        expansion = 1.0 - pr ** ((c.kappa_ex - 1.0) / c.kappa_ex)
        return max(w_t / KG_S_TO_KG_H * c.cp_ex * t_ex * c.eta_turb * expansion, 0.0) / 1e3

    def turbo_speed_target(self, p_turb_kw: float, w_c: float) -> float:
        """Speed at which the compressor absorbs the turbine power at flow ``w_c``."""
        c = self.cfg
        w = max(w_c, c.w_comp_min) / KG_S_TO_KG_H
        rise = c.eta_comp * p_turb_kw * 1e3 / (w * c.cp_air * c.t_amb)
        pr = (1.0 + rise) ** (c.kappa_air / (c.kappa_air - 1.0))
        return float(np.sqrt((pr - 1.0) / c.pr_gain))

    def compressor_outlet_pressure(self, turbo_speed: float) -> float:
        return self.cfg.p_amb * (1.0 + self.cfg.pr_gain * turbo_speed ** 2)

    def compressor_flow_target(self, p_im: float, turbo_speed: float) -> float:
        c = self.cfg
        p_c = self.compressor_outlet_pressure(turbo_speed)
        rho = c.p_amb * 1e3 / (R_AIR * c.t_amb)
        w = c.a_comp * np.sqrt(2.0 * rho * 1e3) * _orifice(p_c - p_im, c.dp_reg)
        return max(w * KG_S_TO_KG_H, 0.0)

    # dynamics -----------------------------------------------------------------
    def rhs(self, s: np.ndarray, cmd: ActuatorCommand, op: OperatingPoint) -> np.ndarray:
        c = self.cfg
        p_im, p_ex, nt, w_egr, w_c = s
        w_cyl = self.cylinder_flow(p_im, op.n_e)
        w_f = self.fuel_flow(op.w_inj, op.n_e)
        t_ex = self.exhaust_temperature(w_cyl, w_f)
        w_t = self.turbine_flow(p_ex, t_ex, cmd.vgt_pos)
        # kg/h -> kg/s, Pa -> kPa
        dp_im = R_AIR * c.t_im / c.v_im * (w_c + w_egr - w_cyl) / KG_S_TO_KG_H / 1e3
        dp_ex = R_AIR * t_ex / c.v_ex * (w_cyl + w_f - w_egr - w_t) / KG_S_TO_KG_H / 1e3
        n_ss = self.turbo_speed_target(self.turbine_power(w_t, t_ex, p_ex), w_c)
        dnt = (n_ss - nt) / c.tau_turbo
        dw_egr = (self.egr_flow_target(p_im, p_ex, t_ex, cmd.egr_pos) - w_egr) / c.tau_egr
        dw_c = (self.compressor_flow_target(p_im, nt) - w_c) / c.tau_comp
        return np.array([dp_im, dp_ex, dnt, dw_egr, dw_c])

    def _clamp(self, s: np.ndarray) -> np.ndarray:
        lo = self.STATE_LO.copy()
        lo[:2] *= self.cfg.p_amb
        out = np.clip(s, lo, self.STATE_HI)
        if np.any(out != s):
            self.clamp_events += 1
            log.debug("airpath state clamped: %s -> %s", s, out)
        return out

    def step_array(self, s: np.ndarray, cmd: ActuatorCommand, op: OperatingPoint, dt: float) -> np.ndarray:
        if not (0.0 < dt <= 0.1):
            raise DomainError(f"dt must lie in (0, 0.1] s, got {dt}")
        cmd = cmd.clamped()
        k1 = self.rhs(s, cmd, op)
        k2 = self.rhs(s + 0.5 * dt * k1, cmd, op)
        k3 = self.rhs(s + 0.5 * dt * k2, cmd, op)
        k4 = self.rhs(s + dt * k3, cmd, op)
        return self._clamp(s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))

    def airpath_step(self, state: AirpathState, cmd: ActuatorCommand, op: OperatingPoint,
                     dt: float) -> AirpathState:
        return AirpathState.from_array(self.step_array(state.as_array(), cmd, op, dt))

    def initial_guess(self, op: OperatingPoint) -> np.ndarray:
        c = self.cfg
        p_im = c.p_amb * (1.0 + 0.006 * op.w_inj)
        return np.array([p_im, p_im * 1.15, 60.0, 0.0, self.cylinder_flow(p_im, op.n_e)])

    def settle(self, cmd: ActuatorCommand, op: OperatingPoint, s0=None, dt: float = 0.05,
               t_max: float = 60.0, tol: float = 1e-9) -> np.ndarray:
        """Integrate at fixed inputs until the state stops moving."""
        s = self.initial_guess(op) if s0 is None else np.asarray(s0, dtype=float)
        for _ in range(int(t_max / dt)):
            s_new = self.step_array(s, cmd, op, dt)
            if np.max(np.abs(s_new - s) / (1.0 + np.abs(s))) < tol:
                return s_new
            s = s_new
        return s

    def steady_state(self, cmd: ActuatorCommand, op: OperatingPoint, s0=None) -> np.ndarray:
        """Equilibrium via root finding on the right-hand side, seeded by a short settle."""
        from scipy.optimize import root

        guess = self.settle(cmd, op, s0=s0, t_max=8.0, tol=1e-7)
        sol = root(lambda s: self.rhs(s, cmd.clamped(), op), guess, method="hybr", tol=1e-12)
        if not sol.success:
            return self.settle(cmd, op, s0=guess, t_max=60.0)
        return sol.x

    # outputs ----------------------------------------------------------------
    def chi_egr(self, s: np.ndarray) -> float:
        return egr_rate(max(s[3], 0.0), max(s[4], 0.0))

    def exhaust_flow(self, s: np.ndarray, op: OperatingPoint) -> float:
        """Flow leaving the engine (kg/h): fresh air plus fuel."""
        return float(s[4] + self.fuel_flow(op.w_inj, op.n_e))


# --- static maps --------------------------------------------------------------

def torque_map(n_e: float, w_inj: float) -> float:
    """Brake torque (N m) from speed and fueling."""
    eff = 1.0 - 0.12 * ((n_e - 1500.0) / 900.0) ** 2
    return max(9.6 * w_inj * eff - 25.0 - 0.02 * n_e, 0.0)


def injection_pressure_map(n_e: float, w_inj: float) -> float:
    """Rail pressure (bar)."""
    return 500.0 + 0.30 * n_e + 5.0 * w_inj


def injection_timing_map(n_e: float, w_inj: float) -> float:
    """Main injection timing (deg CA, positive = before TDC)."""
    return 1.0 + 0.004 * n_e - 0.02 * w_inj


@dataclass(frozen=True)
class Extras:
    """FNN channels that the airpath state does not carry."""

    injection_pressure: float
    main_injection_timing: float
    engine_torque: float

    @classmethod
    def from_maps(cls, op: OperatingPoint) -> "Extras":
        return cls(injection_pressure_map(op.n_e, op.w_inj),
                   injection_timing_map(op.n_e, op.w_inj),
                   torque_map(op.n_e, op.w_inj))


def assemble_fnn_input(airpath: AirpathState, cmd: ActuatorCommand, op: OperatingPoint,
                       extras: Extras | None) -> FnnInput:
    if extras is None:
        raise StructuralError("extras (injection pressure, timing, torque) are required")
    return FnnInput(
        injection_pressure=extras.injection_pressure,
        main_injection_timing=extras.main_injection_timing,
        main_injection_fuel_rate=op.w_inj,
        engine_torque=extras.engine_torque,
        engine_speed=op.n_e,
        intake_manifold_pressure=airpath.p_im,
        exhaust_manifold_pressure=airpath.p_ex,
        mass_air_flow=airpath.w_c,
        egr_position=cmd.egr_pos,
        vgt_position=cmd.vgt_pos,
    )


def ground_truth_emissions(inp: FnnInput, cfg: PlantConfig | None = None,
                           rng: np.random.Generator | None = None) -> EmissionsState:
    """Deterministic synthetic emissions map; seeded multiplicative noise if ``rng`` given.

    NOx falls with charge dilution (inferred from mass air flow against the
    cylinder charge) and EGR valve opening, rises with fueling and oxygen
    excess. Soot rises steeply as the air-fuel ratio drops toward smoke.
    """
    cfg = cfg or PlantConfig()
    k = cfg.emissions
    ap = Airpath(cfg)
    fuel = max(inp.main_injection_fuel_rate, 0.0)
    if fuel == 0.0:
        return EmissionsState(0.0, 0.0)
    n_e = inp.engine_speed
    w_cyl = ap.cylinder_flow(inp.intake_manifold_pressure, n_e)
    dilution = float(np.clip(1.0 - inp.mass_air_flow / max(w_cyl, 1e-9), 0.0, 0.8))
    w_f = ap.fuel_flow(fuel, n_e)
    lam = inp.mass_air_flow / (w_f * cfg.afr_stoich)
    timing = inp.main_injection_timing
    load = fuel / 100.0
    o2 = 1.0 - np.exp(-k.nox_o2 * max(lam - 0.8, 0.0))
    nox = (k.nox_ref * load ** k.nox_fuel_exp * np.exp(-k.nox_dilution * dilution)
           * (1.0 - k.nox_egr_pos * inp.egr_position / 100.0)
           * o2 * (1.0 + k.nox_timing * (timing - 6.0))
           * (1.0 - k.nox_speed * (n_e - 1500.0) / 900.0))
    soot = (k.soot_ref * load * np.exp(k.soot_slope * (k.soot_lambda_ref / max(lam, 0.3) - 1.0))
            * (1.0 + k.soot_dilution * dilution) * (1.0 - k.soot_timing * (timing - 6.0)))
    if rng is not None and k.noise_rel > 0:
        nox *= 1.0 + k.noise_rel * rng.standard_normal()
        soot *= 1.0 + k.noise_rel * rng.standard_normal()
    return EmissionsState(float(max(nox, 0.0)), float(np.clip(soot, 0.0, 100.0)))


@dataclass(frozen=True)
class PlantEmissions:
    state: EmissionsState
    clamped: bool


def plant_emissions(fnn: NnParams, airpath: AirpathState, cmd: ActuatorCommand,
                    op: OperatingPoint, extras: Extras | None) -> PlantEmissions:
    """FNN emissions on the assembled 10-channel input, clamped to physical ranges."""
    raw = fnn_forward(fnn, assemble_fnn_input(airpath, cmd, op, extras))
    nox = max(raw.nox, 0.0)
    soot = float(np.clip(raw.soot, 0.0, 100.0))
    return PlantEmissions(EmissionsState(nox, soot), nox != raw.nox or soot != raw.soot)


# --- trajectory logging ------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "p_im", "p_ex", "turbo_speed", "w_egr", "w_c", "chi_egr",
                      "egr_pos", "vgt_pos", "n_e", "w_inj", "nox", "soot")


def write_trajectory_csv(path, rows: list[dict], columns=TRAJECTORY_COLUMNS) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: repr(float(r[c])) for c in columns})
    return path


__all__ = [
    "AirpathState", "ActuatorCommand", "OperatingPoint", "PlantConfig", "EmissionsMapCoeffs",
    "Airpath", "egr_rate", "ground_truth_emissions", "plant_emissions", "assemble_fnn_input",
    "Extras", "torque_map", "injection_pressure_map", "injection_timing_map",
    "write_trajectory_csv",
]
