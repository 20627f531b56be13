"""Synthetic emissions datasets from the surrogate plant and the ground-truth map.

Two sets with the 10-input/2-output schema: random actuator/operating points
at equilibrium (``steady_state``) and a long excited transient run
(``transient``). Targets carry seeded multiplicative noise.
"""
from __future__ import annotations

import numpy as np

from .config import StackConfig
from .ident import DriveCycle, _cycle_salt, builtin_cycle, lut_query, random_training_cycle
from .plant import (ActuatorCommand, Airpath, AirpathState, Extras, OperatingPoint,
                    assemble_fnn_input, ground_truth_emissions)
from .training import Dataset

STEADY_ENVELOPE = {"n_e": (800.0, 2200.0), "w_inj": (5.0, 130.0), "egr_pos": (0.0, 100.0),
                   "vgt_pos": (10.0, 95.0)}


def steady_state_dataset(cfg: StackConfig, n_points: int | None = None, seed: int | None = None) -> Dataset:
    """Equilibrium records at uniformly drawn (n_e, w_inj, egr_pos, vgt_pos)."""
    d = cfg.section("data")
    n_points = d["steady_points"] if n_points is None else n_points
    rng = np.random.default_rng(d["steady_seed"] if seed is None else seed)
    noise = np.random.default_rng([d["noise_seed"], 1])
    ap = Airpath(cfg.plant)
    draws = np.column_stack([rng.uniform(*STEADY_ENVELOPE[k], n_points) for k in STEADY_ENVELOPE])
    xs, ys = [], []
    for n_e, w, egr, vgt in draws:
        op, cmd = OperatingPoint(n_e, w), ActuatorCommand(egr, vgt)
        s = AirpathState.from_array(ap.steady_state(cmd, op))
        inp = assemble_fnn_input(s, cmd, op, Extras.from_maps(op))
        e = ground_truth_emissions(inp, cfg.plant, noise)
        xs.append(inp.as_array())
        ys.append((e.nox, e.soot))
    return Dataset.from_arrays(np.array(xs), np.array(ys), "steady_state")


def transient_dataset(cfg: StackConfig, cycle: DriveCycle | None = None, substeps: int = 4) -> Dataset:
    """Table-driven actuators with random excitation over a long random cycle, logged every period."""
    d = cfg.section("data")
    if cycle is None:
        cycle = random_training_cycle(duration=d["transient_duration"], seed=d["transient_seed"])
    noise = np.random.default_rng([d["noise_seed"], 2])
    ap = Airpath(cfg.plant)
    offs = cfg.excitation.offsets(cycle.t, _cycle_salt(cycle.name))
    egr_t, vgt_t = cfg.tables["egr_pos"], cfg.tables["vgt_pos"]
    dt = cycle.dt / substeps

    def command(k):
        n, w = cycle.n_e[k], cycle.w_inj_trg[k]
        return ActuatorCommand(lut_query(egr_t, n, w) + offs[k, 0], lut_query(vgt_t, n, w) + offs[k, 1]).clamped()

    op = OperatingPoint(float(cycle.n_e[0]), float(cycle.w_inj_trg[0]))
    cmd = command(0)
    s = ap.steady_state(cmd, op)
    xs, ys = [], []
    for k in range(len(cycle)):
        inp = assemble_fnn_input(AirpathState.from_array(s), cmd, op, Extras.from_maps(op))
        e = ground_truth_emissions(inp, cfg.plant, noise)
        xs.append(inp.as_array())
        ys.append((e.nox, e.soot))
        op = OperatingPoint(float(cycle.n_e[k]), float(cycle.w_inj_trg[k]))
        cmd = command(k)
        for _ in range(substeps):
            s = ap.step_array(s, cmd, op, dt)
    return Dataset.from_arrays(np.array(xs), np.array(ys), "transient")


def ident_cycles(cfg: StackConfig) -> list[DriveCycle]:
    """Cycles used for recurrent-model identification, in config order."""
    d = cfg.section("data")
    out = []
    for name in d["ident_cycles"]:
        if name == "ident":
            c = random_training_cycle(duration=d["ident_duration"], seed=d["ident_seed"])
            out.append(DriveCycle("ident", c.t, c.n_e, c.w_inj_trg))
        else:
            out.append(builtin_cycle(name))
    return out


__all__ = ["steady_state_dataset", "transient_dataset", "ident_cycles", "STEADY_ENVELOPE"]
