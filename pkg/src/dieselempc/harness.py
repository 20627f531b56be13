"""Closed-loop scenario runner, emissions metrics and the comparison table.

Per control period: measure emissions on the plant, look up the airpath
targets at (n_e, w_inj_trg), let the supervisor (lookup passthrough or EMPC)
produce adjusted targets and fueling, run the inner loop, then advance the
plant over the period with the resulting actuator command.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import StackConfig
from .empc import EmpcController, OcpConfig, Targets, scenario_preset, write_diagnostics_csv
from .errors import DomainError
from .ident import DriveCycle, builtin_cycle, lut_query, read_cycle_csv
from .inner_loop import AirpathTargets, InnerLoop
from .nn import NnParams
from .plant import Airpath, AirpathState, Extras, OperatingPoint, plant_emissions, write_trajectory_csv

log = logging.getLogger(__name__)

SCENARIO_TAGS = ("baseline", "A", "B", "C", "D", "custom")
LOG_COLUMNS = ("t", "n_e", "w_inj_trg", "w_inj", "p_im_trg", "chi_egr_trg", "p_im_adj", "chi_egr_adj",
               "p_im", "p_ex", "turbo_speed", "w_egr", "w_c", "chi_egr", "egr_pos", "vgt_pos",
               "nox", "soot", "w_ext", "fuel_flow")
METRIC_FIELDS = ("cumulative_nox", "peak_nox", "average_nox", "average_soot", "peak_soot",
                 "violation_ratio", "total_fuel")


def case_study_trace(dt: float = 0.2) -> DriveCycle:
    """Constant 1500 rpm with a fuel tip-in at 5 s and tip-out at 15 s, then a
    1500 -> 2000 rpm ramp between 25 s and 35 s at constant fuel; 45 s long."""
    t = np.round(np.arange(0.0, 45.0 + 1e-9, dt), 10)
    w = np.where((t >= 5.0) & (t < 15.0), 100.0, 40.0)
    n = np.interp(t, [0.0, 25.0, 35.0, 45.0], [1500.0, 1500.0, 2000.0, 2000.0])
    return DriveCycle("case_study", t, n, w)


CASE_STUDY_EVENTS = (5.0, 15.0, 25.0)


def resolve_cycle(ref) -> DriveCycle:
    """A DriveCycle, ``case_study``, a builtin cycle name, or a CSV path."""
    if isinstance(ref, DriveCycle):
        return ref
    if ref == "case_study":
        return case_study_trace()
    path = Path(str(ref))
    if path.suffix == ".csv" or path.exists():
        return read_cycle_csv(path)
    return builtin_cycle(str(ref))


# --- metrics -------------------------------------------------------------------

def cumulative_nox(w_ext, nox, dt: float) -> float:
    """Trapezoidal integral of exhaust flow times NOx concentration over time."""
    w_ext = np.asarray(w_ext, dtype=float)
    nox = np.asarray(nox, dtype=float)
    if len(w_ext) == 0 or len(w_ext) != len(nox):
        raise DomainError("cumulative_nox needs equal-length, non-empty channels")
    y = w_ext * nox
    if len(y) == 1:
        return 0.0
    return float(dt * (y.sum() - 0.5 * (y[0] + y[-1])))


def violation_ratio(soot, soot_lim: float) -> float:
    """Percentage of samples with Soot strictly above the limit."""
    soot = np.asarray(soot, dtype=float)
    if len(soot) == 0:
        raise DomainError("empty trajectory")
    return float(100.0 * np.count_nonzero(soot > soot_lim) / len(soot))


@dataclass(frozen=True)
class Metrics:
    cumulative_nox: float  # kg/h * ppm * s
    peak_nox: float  # ppm
    average_nox: float  # ppm
    average_soot: float  # %
    peak_soot: float  # %
    violation_ratio: float  # %
    total_fuel: float  # mg
    trajectory_path: str | None = None
    diagnostics_path: str | None = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def compute_metrics(log_rows: dict, dt: float, soot_lim: float) -> Metrics:
    nox, soot = np.asarray(log_rows["nox"]), np.asarray(log_rows["soot"])
    fuel_mg = float(np.sum(np.asarray(log_rows["fuel_flow"])) * dt * 1e6 / 3600.0)
    return Metrics(cumulative_nox(log_rows["w_ext"], nox, dt), float(nox.max()), float(nox.mean()),
                   float(soot.mean()), float(soot.max()), violation_ratio(soot, soot_lim), fuel_mg)


# --- scenarios -----------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    tag: str = "baseline"
    cycle: object = "case_study"
    ocp_overrides: dict = field(default_factory=dict)
    soot_lim: float | None = None  # reference limit for metrics and for C / D
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.tag not in SCENARIO_TAGS:
            raise DomainError(f"unknown scenario tag {self.tag!r}")


@dataclass
class Stack:
    """Configuration plus the two trained networks."""

    cfg: StackConfig
    fnn: NnParams
    rnn: NnParams

    def base_ocp(self) -> OcpConfig:
        return OcpConfig.from_dict(self.cfg.section("ocp"))

    def scenario_ocp(self, sc: ScenarioConfig) -> OcpConfig | None:
        if sc.tag == "baseline":
            return None
        s = self.cfg.section("scenarios")
        base = self.base_ocp()
        if sc.tag != "custom":
            base = scenario_preset(sc.tag, base, sc.soot_lim, s["eta_low"], s["eta_high"])
        d = base.to_dict()
        d.update(sc.ocp_overrides)
        return OcpConfig.from_dict(d)


@dataclass
class ScenarioResult:
    tag: str
    cycle: str
    metrics: Metrics
    log: dict
    diagnostics: list = field(default_factory=list)
    fuel_bound_violations: int = 0


def run_scenario(sc: ScenarioConfig, stack: Stack, substeps: int = 4) -> ScenarioResult:
    """Closed-loop simulation of one scenario over its cycle."""
    cycle = resolve_cycle(sc.cycle)
    cfg = stack.cfg
    ap = Airpath(cfg.plant)
    tables = cfg.tables
    inner = InnerLoop(tables["egr_pos"], tables["vgt_pos"], replace(cfg.inner_gains, dt=cycle.dt))
    ocp = stack.scenario_ocp(sc)
    ctrl = EmpcController(stack.rnn, ocp) if ocp is not None else None
    lower = ocp.fuel_lower_frac if ocp is not None else 1.0
    dt_plant = cycle.dt / substeps

    op = OperatingPoint(float(cycle.n_e[0]), float(cycle.w_inj_trg[0]))
    cmd = inner.feedforward(op)
    s = ap.steady_state(cmd, op)
    rows = {c: [] for c in LOG_COLUMNS}
    violations = 0
    for k in range(len(cycle)):
        state = AirpathState.from_array(s)
        x = plant_emissions(stack.fnn, state, cmd, op, Extras.from_maps(op)).state
        n_e, w_trg = float(cycle.n_e[k]), float(cycle.w_inj_trg[k])
        p_trg = lut_query(tables["p_im_trg"], n_e, w_trg)
        chi_trg = lut_query(tables["chi_egr_trg"], n_e, w_trg)
        chi = ap.chi_egr(s)
        if ctrl is None:
            p_adj, chi_adj, w = p_trg, chi_trg, w_trg
        else:
            u, _ = ctrl.step(x, OperatingPoint(n_e, w_trg), Targets(p_trg, chi_trg, w_trg))
            p_adj, chi_adj, w = u.p_im_adj, u.chi_egr_adj, u.w_inj_adj
        if not (lower * w_trg - 1e-9 <= w <= w_trg + 1e-9):
            violations += 1
        op = OperatingPoint(n_e, w)
        cmd = inner.step(AirpathTargets(p_adj, chi_adj), (state.p_im, chi), op)
        fuel_flow = ap.fuel_flow(w, n_e)
        for name, v in (("t", cycle.t[k]), ("n_e", n_e), ("w_inj_trg", w_trg), ("w_inj", w),
                        ("p_im_trg", p_trg), ("chi_egr_trg", chi_trg), ("p_im_adj", p_adj),
                        ("chi_egr_adj", chi_adj), ("p_im", state.p_im), ("p_ex", state.p_ex),
                        ("turbo_speed", state.turbo_speed), ("w_egr", state.w_egr), ("w_c", state.w_c),
                        ("chi_egr", chi), ("egr_pos", cmd.egr_pos), ("vgt_pos", cmd.vgt_pos),
                        ("nox", x.nox), ("soot", x.soot), ("w_ext", state.w_c + fuel_flow),
                        ("fuel_flow", fuel_flow)):
            rows[name].append(float(v))
        for _ in range(substeps):
            s = ap.step_array(s, cmd, op, dt_plant)
    soot_lim = sc.soot_lim if sc.soot_lim is not None else math.inf
    metrics = compute_metrics(rows, cycle.dt, soot_lim)
    diags = ctrl.diagnostics if ctrl is not None else []
    if sc.output_dir is not None:
        out = Path(sc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{sc.tag}_{cycle.name}"
        tpath = write_trajectory_csv(out / f"{stem}_trajectory.csv",
                                     [dict(zip(LOG_COLUMNS, r)) for r in zip(*rows.values())], LOG_COLUMNS)
        dpath = write_diagnostics_csv(diags, out / f"{stem}_solver.csv") if diags else None
        metrics = replace(metrics, trajectory_path=str(tpath), diagnostics_path=str(dpath) if dpath else None)
    return ScenarioResult(sc.tag, cycle.name, metrics, rows, diags, violations)


# --- comparison ------------------------------------------------------------------

def relative_change(value: float, reference: float) -> float:
    """Percent change against the reference (positive = increase)."""
    if reference == 0.0:
        return 0.0 if value == 0.0 else math.copysign(math.inf, value)
    return 100.0 * (value - reference) / abs(reference)


def format_change(pct: float) -> str:
    if pct == 0.0:
        return "0.000%"
    return f"{'↑' if pct > 0 else '↓'}{abs(pct):.3f}%"


@dataclass(frozen=True)
class ComparisonTable:
    cycle: str
    rows: list  # dicts: scenario, metric values, metric_change strings

    def to_text(self) -> str:
        head = ["scenario"] + [f for f in METRIC_FIELDS]
        lines = [f"cycle: {self.cycle}", " | ".join(f"{h:>22}" for h in head)]
        for r in self.rows:
            cells = [r["scenario"]]
            for f in METRIC_FIELDS:
                cells.append("reference" if r["scenario"] == "baseline" else r[f + "_change"])
            lines.append(" | ".join(f"{c:>22}" for c in cells))
        return "\n".join(lines)

    def write_csv(self, path) -> Path:
        path = Path(path)
        cols = ["cycle", "scenario"] + [c for f in METRIC_FIELDS for c in (f, f + "_change")]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({"cycle": self.cycle, **{k: (repr(v) if isinstance(v, float) else v)
                                                     for k, v in r.items()}})
        return path


def compare_scenarios(results: list) -> ComparisonTable:
    """Relative-change table against the baseline run of the same cycle.

    Accepts ``ScenarioResult`` objects or ``(tag, cycle, Metrics)`` triples.
    """
    items = [(r.tag, r.cycle, r.metrics) if isinstance(r, ScenarioResult) else tuple(r) for r in results]
    if not items:
        raise DomainError("nothing to compare")
    cycles = {c for _, c, _ in items}
    if len(cycles) != 1:
        raise DomainError(f"runs use different cycles: {sorted(cycles)}")
    refs = [m for t, _, m in items if t == "baseline"]
    if not refs:
        raise DomainError("comparison needs a baseline run")
    ref = refs[0]
    rows = []
    for tag, _, m in items:
        row = {"scenario": tag}
        for f in METRIC_FIELDS:
            v = getattr(m, f)
            row[f] = v
            row[f + "_change"] = format_change(relative_change(v, getattr(ref, f)))
        rows.append(row)
    return ComparisonTable(cycles.pop(), rows)


__all__ = ["case_study_trace", "cumulative_nox", "violation_ratio", "Metrics", "compute_metrics",
           "ScenarioConfig", "Stack", "ScenarioResult", "run_scenario", "compare_scenarios",
           "ComparisonTable", "relative_change", "format_change", "resolve_cycle", "SCENARIO_TAGS",
           "METRIC_FIELDS", "CASE_STUDY_EVENTS"]
