"""Lookup tables, drive cycles and open-loop identification data.

The identification run follows the modular recipe: the plant is driven over
transient cycles with EGR/VGT positions read straight from speed/fuel lookup
tables, no airpath controller in the loop, and the realized intake pressure
and EGR rate are logged next to the plant-side emissions.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, NumericError, StructuralError
from .nn import NnParams, rnn_step_array
from .plant import ActuatorCommand, Airpath, AirpathState, Extras, OperatingPoint, PlantConfig, \
    ground_truth_emissions, assemble_fnn_input, plant_emissions
from .training import Episode, TrajectoryDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LookupTable2D:
    n_e: np.ndarray  # rpm breakpoints
    w_inj: np.ndarray  # mg/stroke breakpoints
    values: np.ndarray  # (len(n_e), len(w_inj))

    def __post_init__(self):
        n = np.array(self.n_e, dtype=float)
        w = np.array(self.w_inj, dtype=float)
        v = np.array(self.values, dtype=float)
        if n.ndim != 1 or w.ndim != 1 or len(n) < 2 or len(w) < 2:
            raise StructuralError("each axis needs at least two breakpoints")
        if np.any(np.diff(n) <= 0) or np.any(np.diff(w) <= 0):
            raise StructuralError("breakpoints must be strictly increasing")
        if v.shape != (len(n), len(w)):
            raise StructuralError(f"values shape {v.shape} != ({len(n)}, {len(w)})")
        for name, arr in (("n_e", n), ("w_inj", w), ("values", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def to_dict(self) -> dict:
        return {"n_e": self.n_e.tolist(), "w_inj": self.w_inj.tolist(),
                "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LookupTable2D":
        return cls(d["n_e"], d["w_inj"], d["values"])

    @classmethod
    def from_function(cls, n_e, w_inj, fn) -> "LookupTable2D":
        return cls(n_e, w_inj, [[fn(n, w) for w in w_inj] for n in n_e])


def _locate(axis: np.ndarray, q: float) -> tuple[int, float]:
    q = min(max(q, axis[0]), axis[-1])
    i = int(np.searchsorted(axis, q, side="right")) - 1
    i = min(max(i, 0), len(axis) - 2)
    return i, (q - axis[i]) / (axis[i + 1] - axis[i])


def lut_query(tbl: LookupTable2D, n_e: float, w_inj: float) -> float:
    """Bilinear interpolation, clamped to the table hull."""
    i, a = _locate(tbl.n_e, n_e)
    j, b = _locate(tbl.w_inj, w_inj)
    v = tbl.values
    return float((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
                 + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])


# --- drive cycles ------------------------------------------------------------

@dataclass(frozen=True)
class DriveCycle:
    name: str
    t: np.ndarray  # s, uniform
    n_e: np.ndarray  # rpm
    w_inj_trg: np.ndarray  # mg/stroke

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if not (len(t) == len(self.n_e) == len(self.w_inj_trg)) or len(t) < 2:
            raise StructuralError("cycle columns must have equal length >= 2")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, dt.mean()):
            raise DomainError("cycle timestamps must be uniform and increasing")
        for name in ("t", "n_e", "w_inj_trg"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)

    def head(self, n: int) -> "DriveCycle":
        return DriveCycle(self.name, self.t[:n], self.n_e[:n], self.w_inj_trg[:n])


def _hold(t: np.ndarray, knots_t, knots_v) -> np.ndarray:
    idx = np.searchsorted(np.asarray(knots_t), t, side="right") - 1
    return np.asarray(knots_v, dtype=float)[np.clip(idx, 0, len(knots_v) - 1)]


def urban_cycle(dt: float = 0.2, duration: float = 240.0, seed: int = 11) -> DriveCycle:
    """Low-speed stop-and-go character: frequent fuel steps, speed moving in small ramps."""
    rng = np.random.default_rng(seed)
    t = np.round(np.arange(0.0, duration + 1e-9, dt), 10)
    kt, kn, kw = [0.0], [900.0], [15.0]
    while kt[-1] < duration:
        kt.append(kt[-1] + rng.uniform(3.0, 8.0))
        kn.append(float(np.clip(kn[-1] + rng.uniform(-250, 250), 800.0, 1500.0)))
        if rng.random() < 0.45:
            kw.append(float(rng.uniform(60.0, 105.0)))  # tip-in
        else:
            kw.append(float(rng.uniform(8.0, 45.0)))
    n_e = np.interp(t, kt, kn)
    w = _hold(t, kt, kw)
    return DriveCycle("urban", t, n_e, w)


def highway_cycle(dt: float = 0.2, duration: float = 240.0, seed: int = 23) -> DriveCycle:
    """Sustained load: long speed and fuel ramps at mid/high speed, occasional steps."""
    rng = np.random.default_rng(seed)
    t = np.round(np.arange(0.0, duration + 1e-9, dt), 10)
    kt, kn, kw = [0.0], [1300.0], [45.0]
    while kt[-1] < duration:
        kt.append(kt[-1] + rng.uniform(8.0, 20.0))
        kn.append(float(rng.uniform(1200.0, 2200.0)))
        kw.append(float(rng.uniform(30.0, 115.0)))
    n_e = np.interp(t, kt, kn)
    w = np.interp(t, kt, kw)
    # a few sharp load changes on top of the ramps
    for ts in rng.uniform(10.0, duration - 10.0, size=4):
        sel = (t >= ts) & (t < ts + rng.uniform(3.0, 6.0))
        w[sel] = np.minimum(w[sel] + 35.0, 120.0)
    return DriveCycle("highway", t, n_e, w)


def random_training_cycle(dt: float = 0.2, duration: float = 2400.0, seed: int = 5) -> DriveCycle:
    """Broad random steps and ramps for building emissions training data."""
    rng = np.random.default_rng(seed)
    t = np.round(np.arange(0.0, duration + 1e-9, dt), 10)
    kt, kn, kw = [0.0], [1000.0], [20.0]
    while kt[-1] < duration:
        kt.append(kt[-1] + rng.uniform(2.0, 12.0))
        kn.append(float(rng.uniform(800.0, 2200.0)))
        kw.append(float(rng.uniform(5.0, 120.0)))
    n_e = np.interp(t, kt, kn)
    step = rng.random(len(kt)) < 0.5
    w = np.where(_hold(t, kt, step).astype(bool), _hold(t, kt, kw), np.interp(t, kt, kw))
    return DriveCycle(f"train{seed}", t, n_e, w)


BUILTIN_CYCLES = {"urban": urban_cycle, "highway": highway_cycle}


def builtin_cycle(name: str, dt: float = 0.2) -> DriveCycle:
    if name not in BUILTIN_CYCLES:
        raise DomainError(f"unknown builtin cycle {name!r}; choose from {sorted(BUILTIN_CYCLES)}")
    return BUILTIN_CYCLES[name](dt=dt)


def read_cycle_csv(path, name: str | None = None) -> DriveCycle:
    """Read ``t, n_e, w_inj_trg`` columns (header required)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"t", "n_e", "w_inj_trg"} <= set(rows[0]):
        raise StructuralError(f"{path} needs a header with t, n_e, w_inj_trg")
    col = lambda k: np.array([float(r[k]) for r in rows])
    return DriveCycle(name or path.stem, col("t"), col("n_e"), col("w_inj_trg"))


def write_cycle_csv(cycle: DriveCycle, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "n_e", "w_inj_trg"])
        for row in zip(cycle.t, cycle.n_e, cycle.w_inj_trg):
            w.writerow([repr(float(v)) for v in row])
    return path


# --- identification data -------------------------------------------------------

@dataclass(frozen=True)
class Excitation:
    """Piecewise-constant random offsets added to the table actuator positions."""

    egr_amp: float = 0.0  # % open
    vgt_amp: float = 0.0  # % closed
    hold_min: float = 1.0  # s
    hold_max: float = 4.0  # s
    seed: int = 0

    def offsets(self, t: np.ndarray, salt: int = 0) -> np.ndarray:
        if self.egr_amp == 0.0 and self.vgt_amp == 0.0:
            return np.zeros((len(t), 2))
        rng = np.random.default_rng([self.seed, salt])
        knots, vals = [t[0]], []
        while knots[-1] <= t[-1]:
            knots.append(knots[-1] + rng.uniform(self.hold_min, self.hold_max))
        vals = np.column_stack([rng.uniform(-self.egr_amp, self.egr_amp, len(knots)),
                                rng.uniform(-self.vgt_amp, self.vgt_amp, len(knots))])
        idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 1)
        return vals[idx]


def _cycle_salt(name: str) -> int:
    return sum((i + 1) * ord(c) for i, c in enumerate(name))


def simulate_open_loop(plant_cfg: PlantConfig, cycle: DriveCycle, egr_table: LookupTable2D,
                       vgt_table: LookupTable2D, emissions, excitation: Excitation | None = None,
                       substeps: int = 4) -> Episode:
    """Run one cycle with table-driven actuators and log at the cycle period.

    ``emissions(airpath_state, cmd, op)`` returns an EmissionsState; it is the
    plant-side emissions model (trained FNN or the ground-truth map).
    """
    ap = Airpath(plant_cfg)
    offs = (excitation or Excitation()).offsets(cycle.t, _cycle_salt(cycle.name))
    dt = cycle.dt / substeps

    def command(k):
        n, w = cycle.n_e[k], cycle.w_inj_trg[k]
        return ActuatorCommand(lut_query(egr_table, n, w) + offs[k, 0],
                               lut_query(vgt_table, n, w) + offs[k, 1]).clamped()

    op = OperatingPoint(float(cycle.n_e[0]), float(cycle.w_inj_trg[0]))
    cmd = command(0)
    s = ap.steady_state(cmd, op)
    us, xs = [], []
    for k in range(len(cycle)):
        x = emissions(AirpathState.from_array(s), cmd, op)
        if not np.all(np.isfinite([x.nox, x.soot])) or not np.all(np.isfinite(s)):
            log.warning("%s: non-finite plant output at step %d, truncating", cycle.name, k)
            break
        op = OperatingPoint(float(cycle.n_e[k]), float(cycle.w_inj_trg[k]))
        cmd = command(k)
        us.append((s[0], ap.chi_egr(s), op.n_e, op.w_inj))
        xs.append((x.nox, x.soot))
        try:
            for _ in range(substeps):
                s = ap.step_array(s, cmd, op, dt)
        except (NumericError, FloatingPointError):
            log.warning("%s: plant fault at step %d, truncating", cycle.name, k)
            break
    n = len(us)
    return Episode(cycle.name, cycle.dt, cycle.t[:n].copy(), np.array(us), np.array(xs))


def fnn_emissions_source(fnn: NnParams):
    def source(airpath: AirpathState, cmd: ActuatorCommand, op: OperatingPoint):
        return plant_emissions(fnn, airpath, cmd, op, Extras.from_maps(op)).state
    return source


def ground_truth_source(plant_cfg: PlantConfig, rng: np.random.Generator | None = None):
    def source(airpath: AirpathState, cmd: ActuatorCommand, op: OperatingPoint):
        return ground_truth_emissions(assemble_fnn_input(airpath, cmd, op, Extras.from_maps(op)),
                                      plant_cfg, rng)
    return source


def generate_ident_data(plant_cfg: PlantConfig, cycles, tables: dict, fnn: NnParams,
                        excitation: Excitation | None = None) -> TrajectoryDataset:
    """Open-loop simulation over each cycle with table actuator positions.

    ``tables`` needs ``egr_pos`` and ``vgt_pos`` entries. No airpath controller
    is involved; RNN inputs are the plant's realized intake pressure and EGR rate.
    """
    missing = {"egr_pos", "vgt_pos"} - set(tables)
    if missing:
        raise StructuralError(f"missing actuator tables: {sorted(missing)}")
    source = fnn_emissions_source(fnn)
    episodes = [simulate_open_loop(plant_cfg, c, tables["egr_pos"], tables["vgt_pos"], source,
                                   excitation) for c in cycles]
    return TrajectoryDataset(tuple(episodes))


@dataclass(frozen=True)
class RnnValidationReport:
    nox_mae: float  # ppm
    soot_mae: float  # %
    n_steps: int
    nox_pred: np.ndarray
    soot_pred: np.ndarray


def rollout_closed(rnn: NnParams, x0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Closed recursion ``x_{k+1} = f(x_k, u_k)``; returns states x_1..x_T."""
    out = np.empty((len(inputs), 2))
    x = np.asarray(x0, dtype=float)
    for k, u in enumerate(inputs):
        x = rnn_step_array(rnn, x, u)
        out[k] = x
    return out


def validate_rnn_against_plant(rnn: NnParams, segment: Episode) -> RnnValidationReport:
    """Roll the RNN on its own state along a logged plant segment and compare."""
    if len(segment) < 2:
        raise DomainError("validation segment needs at least two samples")
    pred = rollout_closed(rnn, segment.x[0], segment.u[:-1])
    err = np.abs(pred - segment.x[1:])
    return RnnValidationReport(float(err[:, 0].mean()), float(err[:, 1].mean()), len(pred),
                               pred[:, 0], pred[:, 1])
