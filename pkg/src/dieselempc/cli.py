"""Command-line entry point: ``dieselempc <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import load_config
from .errors import DomainError, NumericError, StructuralError


def _cfg(args):
    cfg = load_config(args.config)
    if getattr(args, "quick", False):
        from .pipeline import QUICK_OVERRIDES
        cfg = cfg.with_overrides(QUICK_OVERRIDES)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train_fnn(args) -> int:
    from .pipeline import StageCache, stage_data, stage_fnn, stage_tune
    cfg = _cfg(args)
    cache = StageCache(_out(args) / "cache")
    dk, dd = stage_data(cfg, cache)
    tk, td = stage_tune(cfg, cache, dk, dd) if cfg.section("training")["grid"].get("use_best") else (None, None)
    _, fd = stage_fnn(cfg, cache, dk, dd, tk, td)
    print(f"weights: {fd / 'fnn.json'}")
    print((fd / "fnn_eval.json").read_text())
    return 0


def cmd_tune(args) -> int:
    from .pipeline import StageCache, stage_data, stage_tune
    cfg = _cfg(args)
    cache = StageCache(_out(args) / "cache")
    dk, dd = stage_data(cfg, cache)
    _, td = stage_tune(cfg, cache, dk, dd)
    print(f"heatmap: {td / 'heatmap.csv'}")
    print(f"best: {(td / 'best.json').read_text()}")
    return 0


def cmd_gen_ident(args) -> int:
    from .datagen import ident_cycles
    from .ident import builtin_cycle, generate_ident_data, read_cycle_csv
    from .nn import load_params
    from .training import write_trajectories_csv
    cfg = _cfg(args)
    if args.cycle:
        cycles = [read_cycle_csv(c) if c.endswith(".csv") else builtin_cycle(c) for c in args.cycle]
    else:
        cycles = ident_cycles(cfg)
    ds = generate_ident_data(cfg.plant, cycles, cfg.tables, load_params(args.fnn), cfg.excitation)
    path = write_trajectories_csv(ds, _out(args) / "ident.csv")
    print(f"{len(ds)} samples in {len(ds.episodes)} episodes -> {path}")
    return 0


def cmd_train_rnn(args) -> int:
    from .ident import validate_rnn_against_plant
    from .nn import save_params
    from .pipeline import _hp
    from .training import read_trajectories_csv, split_trajectory, train_rnn_horizon, write_curves_csv
    cfg = _cfg(args)
    t = cfg.section("training")
    parts = split_trajectory(read_trajectories_csv(args.ident), tuple(t["split"]))
    horizon = int(cfg.section("ocp").get("N", 8))
    res = train_rnn_horizon(parts["train"], horizon, _hp(t["rnn"]), seed=t["seed"],
                            val=parts["validation"], hidden=tuple(t["rnn"]["hidden"]))
    out = _out(args)
    save_params(res.params, out / "rnn.json", "rnn")
    write_curves_csv(res.curves, out / "rnn_curves.csv")
    for ep in parts["test"].episodes:
        r = validate_rnn_against_plant(res.params, ep)
        print(f"{ep.name}: NOx MAE {r.nox_mae:.2f} ppm, Soot MAE {r.soot_mae:.3f} %")
    return 0


def cmd_simulate(args) -> int:
    from .harness import ScenarioConfig, Stack, run_scenario
    from .nn import load_params
    cfg = _cfg(args)
    stack = Stack(cfg, load_params(args.fnn), load_params(args.rnn))
    sc = ScenarioConfig(args.scenario, args.cycle, soot_lim=args.soot_lim, output_dir=str(_out(args)))
    res = run_scenario(sc, stack)
    path = Path(args.out) / f"{res.tag}_{res.cycle}_metrics.json"
    path.write_text(json.dumps({"tag": res.tag, "cycle": res.cycle, "metrics": asdict(res.metrics),
                                "fuel_bound_violations": res.fuel_bound_violations}, indent=1))
    print(json.dumps(res.metrics.row(), indent=1))
    return 0


def cmd_compare(args) -> int:
    from .harness import Metrics, compare_scenarios
    items = []
    for p in args.metrics:
        d = json.loads(Path(p).read_text())
        items.append((d["tag"], d["cycle"], Metrics(**d["metrics"])))
    table = compare_scenarios(items)
    print(table.to_text())
    if args.out:
        table.write_csv(args.out)
    return 0


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline
    res = run_pipeline(_cfg(args), args.out)
    for table in res.tables.values():
        print(table.to_text())
        print()
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dieselempc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="stack config YAML (default: bundled)")
        sp.add_argument("--quick", action="store_true", help="apply the reduced-size preset")
        sp.set_defaults(func=fn)
        return sp

    sp = add("train-fnn", cmd_train_fnn, "generate synthetic data and train the emissions FNN")
    sp.add_argument("--out", default="runs")
    sp = add("tune-hparams", cmd_tune, "momentum / learning-rate grid search")
    sp.add_argument("--out", default="runs")
    sp = add("gen-ident-data", cmd_gen_ident, "open-loop identification data for the RNN")
    sp.add_argument("--fnn", required=True)
    sp.add_argument("--cycle", action="append", help="builtin name or CSV path (repeatable)")
    sp.add_argument("--out", default="runs")
    sp = add("train-rnn", cmd_train_rnn, "train the RNN on the horizon loss")
    sp.add_argument("--ident", required=True)
    sp.add_argument("--out", default="runs")
    sp = add("simulate", cmd_simulate, "run one scenario over one cycle")
    sp.add_argument("--scenario", required=True, choices=["baseline", "A", "B", "C", "D"])
    sp.add_argument("--cycle", default="case_study", help="case_study, urban, highway or a CSV path")
    sp.add_argument("--fnn", required=True)
    sp.add_argument("--rnn", required=True)
    sp.add_argument("--soot-lim", type=float, default=None)
    sp.add_argument("--out", default="runs")
    sp = add("compare-scenarios", cmd_compare, "relative table from simulate metrics files")
    sp.add_argument("metrics", nargs="+")
    sp.add_argument("--out", default=None, help="CSV path")
    sp = add("pipeline", cmd_pipeline, "full chain with content-hash caching")
    sp.add_argument("--out", default="runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, StructuralError, NumericError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
