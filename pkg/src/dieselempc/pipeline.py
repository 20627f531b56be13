"""End-to-end pipeline with content-hash caching.

Stages: synthetic emissions data -> hyperparameter grid -> FNN -> identification
data -> RNN -> scenario runs -> comparison tables. Each stage writes into
``<out>/cache/<stage>-<key>/`` where the key hashes the stage's config inputs
and the keys of the stages it depends on, so a rerun with unchanged inputs
reuses the stored artifacts.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import StackConfig
from .datagen import ident_cycles, steady_state_dataset, transient_dataset
from .harness import ComparisonTable, ScenarioConfig, Stack, compare_scenarios, run_scenario
from .ident import generate_ident_data, validate_rnn_against_plant
from .nn import load_params, save_params
from .training import (HyperParams, evaluate_model, grid_search, merge_emissions_datasets,
                       read_dataset_csv, read_trajectories_csv, split_dataset, split_trajectory,
                       train_fnn, train_rnn_horizon, write_curves_csv, write_dataset_csv,
                       write_heatmap_csv, write_trajectories_csv)

log = logging.getLogger(__name__)

EMPC_TAGS = ("A", "B", "C", "D")
BUNDLED_CYCLES = ("urban", "highway")


def _key(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _hp(d: dict) -> HyperParams:
    return HyperParams(**{k: v for k, v in d.items() if k != "hidden"})


class StageCache:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.hits: dict[str, bool] = {}

    def dir(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}-{key}"

    def run(self, stage: str, key: str, build) -> Path:
        """Return the stage directory, building it with ``build(tmpdir)`` if absent."""
        final = self.dir(stage, key)
        if (final / ".done").exists():
            self.hits[stage] = True
            return final
        tmp = final.with_name(final.name + ".tmp")
        shutil.rmtree(tmp, ignore_errors=True)
        tmp.mkdir(parents=True)
        build(tmp)
        (tmp / ".done").write_text(key)
        shutil.rmtree(final, ignore_errors=True)
        tmp.rename(final)
        self.hits[stage] = False
        return final


# --- stages --------------------------------------------------------------------

def stage_data(cfg: StackConfig, cache: StageCache) -> tuple[str, Path]:
    key = _key("data", cfg.raw["plant"], cfg.raw["tables"], cfg.raw["data"])

    def build(d: Path):
        write_dataset_csv(steady_state_dataset(cfg), d / "steady_state.csv")
        write_dataset_csv(transient_dataset(cfg), d / "transient.csv")
    return key, cache.run("data", key, build)


def _merged(cfg: StackConfig, data_dir: Path):
    t = cfg.section("training")
    merged = merge_emissions_datasets(read_dataset_csv(data_dir / "steady_state.csv"),
                                      read_dataset_csv(data_dir / "transient.csv"),
                                      cfg.section("data")["soot_cutoff"])
    return split_dataset(merged, tuple(t["split"]), seed=t["seed"])


def stage_tune(cfg: StackConfig, cache: StageCache, data_key: str, data_dir: Path) -> tuple[str, Path]:
    t = cfg.section("training")
    key = _key("tune", data_key, t["grid"], t["seed"], t["split"], t["fnn"]["hidden"], t["fnn"]["batch_size"])

    def build(d: Path):
        data = _merged(cfg, data_dir)
        g = t["grid"]
        cells = [(r, l) for r in g["momentum"] for l in g["learning_rate"]]
        rep = grid_search(cells, data.part("train"), data.part("validation"), g["epochs_per_cell"],
                          seed=t["seed"], batch_size=t["fnn"]["batch_size"], hidden=tuple(t["fnn"]["hidden"]))
        write_heatmap_csv(rep, d / "heatmap.csv")
        (d / "best.json").write_text(json.dumps({"momentum": rep.best[0], "learning_rate": rep.best[1]}))
    return key, cache.run("tune", key, build)


def stage_fnn(cfg: StackConfig, cache: StageCache, data_key: str, data_dir: Path,
              tune_key: str, tune_dir: Path) -> tuple[str, Path]:
    t = cfg.section("training")
    use_best = t["grid"].get("use_best", False)
    key = _key("fnn", data_key, t["fnn"], t["seed"], t["split"], tune_key if use_best else None)

    def build(d: Path):
        data = _merged(cfg, data_dir)
        hp = dict(t["fnn"])
        if use_best:
            hp.update(json.loads((tune_dir / "best.json").read_text()))
        res = train_fnn(data, _hp(hp), seed=t["seed"], hidden=tuple(t["fnn"]["hidden"]))
        save_params(res.params, d / "fnn.json", "fnn")
        write_curves_csv(res.curves, d / "fnn_curves.csv")
        rep = evaluate_model(res.params, data, "test")
        (d / "fnn_eval.json").write_text(json.dumps(
            {"nox_mae": rep.nox_mae, "soot_mae": rep.soot_mae, "mse": rep.mse, "n": rep.n,
             "by_provenance": rep.by_provenance, "diverged": res.diverged}, indent=1))
    return key, cache.run("fnn", key, build)


def stage_ident(cfg: StackConfig, cache: StageCache, fnn_key: str, fnn_dir: Path) -> tuple[str, Path]:
    key = _key("ident", fnn_key, cfg.raw["plant"], cfg.raw["tables"], cfg.raw["data"])

    def build(d: Path):
        fnn = load_params(fnn_dir / "fnn.json")
        ds = generate_ident_data(cfg.plant, ident_cycles(cfg), cfg.tables, fnn, cfg.excitation)
        write_trajectories_csv(ds, d / "ident.csv")
    return key, cache.run("ident", key, build)


def stage_rnn(cfg: StackConfig, cache: StageCache, ident_key: str, ident_dir: Path) -> tuple[str, Path]:
    t = cfg.section("training")
    horizon = int(cfg.section("ocp").get("N", 8))
    key = _key("rnn", ident_key, t["rnn"], t["seed"], t["split"], horizon)

    def build(d: Path):
        parts = split_trajectory(read_trajectories_csv(ident_dir / "ident.csv"), tuple(t["split"]))
        res = train_rnn_horizon(parts["train"], horizon, _hp(t["rnn"]), seed=t["seed"],
                                val=parts["validation"], hidden=tuple(t["rnn"]["hidden"]))
        save_params(res.params, d / "rnn.json", "rnn")
        write_curves_csv(res.curves, d / "rnn_curves.csv")
        report = {}
        for ep in parts["test"].episodes:
            r = validate_rnn_against_plant(res.params, ep)
            report[ep.name] = {"nox_mae": r.nox_mae, "soot_mae": r.soot_mae, "n": r.n_steps,
                               "nox_range": float(np.ptp(ep.x[:, 0]))}
        report["diverged"] = res.diverged
        (d / "rnn_validation.json").write_text(json.dumps(report, indent=1))
    return key, cache.run("rnn", key, build)


@dataclass
class PipelineResult:
    out_dir: Path
    tables: dict[str, ComparisonTable]
    soot_lim: float
    stage_dirs: dict[str, Path]
    cache_hits: dict[str, bool]
    results: dict = field(default_factory=dict)  # (tag, cycle) -> Metrics
    fuel_bound_violations: int = 0
    solver: dict = field(default_factory=dict)  # (tag, cycle) -> solver_summary


def solver_summary(diagnostics: list[dict]) -> dict:
    times = [d["solve_time"] for d in diagnostics]
    return {"calls": len(diagnostics),
            "converged": sum(d["status"] == "converged" for d in diagnostics),
            "restored": sum(d["status"] == "infeasible_restored" for d in diagnostics),
            "budget_exhausted": sum(int(d["budget_exhausted"]) for d in diagnostics),
            "max_solve_time": max(times), "mean_solve_time": sum(times) / len(times)}


def soot_limit_from_baselines(baselines: dict, percentile: float) -> float:
    soot = np.concatenate([np.asarray(baselines[c].log["soot"]) for c in BUNDLED_CYCLES if c in baselines])
    return float(np.percentile(soot, percentile))


def run_pipeline(cfg: StackConfig, out_dir, cycles=None) -> PipelineResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    data_key, data_dir = stage_data(cfg, cache)
    tune_key, tune_dir = stage_tune(cfg, cache, data_key, data_dir)
    fnn_key, fnn_dir = stage_fnn(cfg, cache, data_key, data_dir, tune_key, tune_dir)
    ident_key, ident_dir = stage_ident(cfg, cache, fnn_key, fnn_dir)
    rnn_key, rnn_dir = stage_rnn(cfg, cache, ident_key, ident_dir)
    stack = Stack(cfg, load_params(fnn_dir / "fnn.json"), load_params(rnn_dir / "rnn.json"))

    sc_cfg = cfg.section("scenarios")
    cycles = list(cycles or sc_cfg["cycles"])
    runs_dir = out / "runs"
    baselines = {c: run_scenario(ScenarioConfig("baseline", c, output_dir=str(runs_dir)), stack) for c in cycles}
    soot_lim = sc_cfg.get("soot_lim")
    if soot_lim is None:
        soot_lim = soot_limit_from_baselines(baselines, sc_cfg["soot_lim_percentile"])
    tables, results, violations, solver = {}, {}, 0, {}
    for c in cycles:
        base = run_scenario(ScenarioConfig("baseline", c, soot_lim=soot_lim, output_dir=str(runs_dir)), stack)
        runs = [base] + [run_scenario(ScenarioConfig(tag, c, soot_lim=soot_lim, output_dir=str(runs_dir)), stack)
                         for tag in EMPC_TAGS]
        for r in runs:
            results[(r.tag, c)] = r.metrics
            violations += r.fuel_bound_violations
            if r.diagnostics:
                solver[(r.tag, c)] = solver_summary(r.diagnostics)
        table = compare_scenarios(runs)
        table.write_csv(out / f"comparison_{c}.csv")
        (out / f"comparison_{c}.txt").write_text(table.to_text() + "\n")
        tables[c] = table
    manifest = {
        "config_hash": cfg.digest(), "package_version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "seeds": {"training": cfg.section("training")["seed"],
                  **{k: v for k, v in cfg.section("data").items() if k.endswith("seed")}},
        "stages": {"data": data_key, "tune": tune_key, "fnn": fnn_key, "ident": ident_key, "rnn": rnn_key},
        "cache_hits": cache.hits, "soot_lim": soot_lim, "cycles": cycles,
        "fuel_bound_violations": violations,
        "solver": {f"{t}/{c}": v for (t, c), v in solver.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    dirs = {"data": data_dir, "tune": tune_dir, "fnn": fnn_dir, "ident": ident_dir, "rnn": rnn_dir}
    return PipelineResult(out, tables, soot_lim, dirs, dict(cache.hits), results, violations, solver)


QUICK_OVERRIDES = {
    "data": {"steady_points": 60, "transient_duration": 300.0, "ident_duration": 200.0,
             "ident_cycles": ["ident"]},
    "training": {"fnn": {"epochs": 20, "learning_rate": 1e-2},
                 "grid": {"momentum": [0.9], "learning_rate": [1e-3, 1e-2]},
                 "rnn": {"epochs": 10, "learning_rate": 1e-2}},
    "scenarios": {"cycles": ["case_study"], "soot_lim": 2.0},
}


__all__ = ["run_pipeline", "PipelineResult", "StageCache", "QUICK_OVERRIDES", "soot_limit_from_baselines",
           "stage_data", "stage_tune", "stage_fnn", "stage_ident", "stage_rnn"]
