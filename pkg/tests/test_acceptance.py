"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the session summary.
The full default pipeline is trained once per session (several minutes).
"""
import json
import math
import time

import numpy as np
import pytest

from dieselempc.config import load_config
from dieselempc.empc import ExtendedState, OcpConfig, Targets, extended_dynamics, rnn_input, solve_ocp
from dieselempc.harness import ScenarioConfig, Stack, run_scenario
from dieselempc.nn import (Gradient, backprop, fnn_architecture, load_params, rnn_architecture,
                           rnn_horizon_jacobians, rnn_step_array)
from dieselempc.pipeline import BUNDLED_CYCLES, EMPC_TAGS, QUICK_OVERRIDES, _merged, run_pipeline
from dieselempc.plant import OperatingPoint
from dieselempc.training import HyperParams, apply_lr_decay, evaluate_model, sgd_momentum_step
from oracles import (INNER_LOOP_POINTS, central_fd, linear_rnn, max_rel_error, parameter_fd, random_net,
                     reachable_targets, track_constant_targets)

pytestmark = pytest.mark.slow
CFG = load_config()


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    return run_pipeline(CFG, out)


@pytest.fixture(scope="session")
def trained_stack(full_run):
    return Stack(CFG, load_params(full_run.stage_dirs["fnn"] / "fnn.json"),
                 load_params(full_run.stage_dirs["rnn"] / "rnn.json"))


def test_01_gradient_correctness(acceptance_record):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for sizes, acts in (fnn_architecture(), rnn_architecture()):
            net = random_net(sizes, acts, seed)
            z, s = rng.normal(size=net.input_dim), rng.normal(size=2)
            worst = max(worst, max_rel_error(backprop(net, z, s).flat(), parameter_fd(net, z, s)))
        net = random_net(*rnn_architecture(), seed)
        x0, useq = rng.normal(size=2), rng.normal(size=(4, 4))
        sens = rnn_horizon_jacobians(net, x0, useq)
        fd_u = central_fd(lambda f: rnn_horizon_jacobians(net, x0, f.reshape(4, 4)).states.ravel(), useq.ravel())
        fd_x = central_fd(lambda x: rnn_horizon_jacobians(net, x, useq).states.ravel(), x0)
        worst = max(worst, max_rel_error(np.transpose(sens.du, (0, 2, 1, 3)), fd_u.reshape(4, 2, 4, 4)),
                    max_rel_error(sens.dx0, fd_x.reshape(4, 2, 2)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    assert acceptance_record(1, "gradient correctness", ok, f"max rel err {worst:.2e}, {elapsed:.1f} s")


def test_02_momentum_and_decay(acceptance_record):
    worst = 0.0
    for rho in (0.5, 0.9, 0.99):
        net = random_net([3, 2], ["identity"], seed=0)
        g = Gradient.from_flat(net, np.linspace(-1.0, 1.0, net.n_params))
        v = None
        for k in range(1, 51):
            net, v = sgd_momentum_step(net, g, v, HyperParams(learning_rate=1e-3, momentum=rho))
            ref = g.flat() * (1 - rho ** k) / (1 - rho)
            worst = max(worst, float(np.max(np.abs(v.flat() - ref) / np.abs(ref))))
    hp = HyperParams(learning_rate=1e-4, decay_factor=0.5, decay_period=100)
    decay_ok = all(apply_lr_decay(hp, e) == 1e-4 * 0.5 ** (e // 100) for e in (0, 100, 250))
    ok = worst <= 1e-12 and decay_ok
    assert acceptance_record(2, "momentum closed form and decay", ok,
                             f"max rel velocity err {worst:.1e}, decay exact {decay_ok}")


def test_03_rate_based_equivalence(acceptance_record):
    n_e, u0 = 1500.0, np.array([150.0, 0.2, 50.0])
    worst = 0.0
    for seed in range(50):
        net = random_net(*rnn_architecture(), seed)
        rng = np.random.default_rng(500 + seed)
        x_prev, x0 = rng.normal(size=2), rng.normal(size=2)
        xe = ExtendedState(x0 - x_prev, x_prev, u0)
        x, u = x0.copy(), u0.copy()
        for j, du in enumerate(rng.normal(size=(8, 3)) * [5.0, 0.02, 3.0]):
            xe = extended_dynamics(net, xe, du, n_e, j)
            u = u + du
            x = rnn_step_array(net, x, rnn_input(u, n_e))
            worst = max(worst, float(np.max(np.abs(xe.x - x) / np.maximum(1.0, np.abs(x)))))
    assert acceptance_record(3, "rate-based equivalence", worst <= 1e-12, f"max per-step drift {worst:.1e}")


def test_04_brute_force_oracle(acceptance_record):
    t0 = time.perf_counter()
    a, b, c, x0 = 0.6, -800.0, 200.0, 300.0
    trg = Targets(150.0, 0.2, 50.0)
    u_prev = trg.as_array()
    cfg = OcpConfig(N=2, eta=1.0)
    sol = solve_ocp(linear_rnn(a, b, c), [x0, 0.0], [x0, 0.0], u_prev, OperatingPoint(1500.0, 50.0), trg, cfg)
    grid = np.arange(-100, 101) * 1e-3  # the full chi_egr rate range
    best = math.inf
    for d_p0 in (-1e-3, 0.0, 1e-3):  # pressure and fuel moves only add cost; probe around zero
        for d_w in (-1e-3, 0.0):
            g0, g1 = np.meshgrid(grid, grid, indexing="ij")
            chi0 = u_prev[1] + g0
            chi1 = chi0 + g1  # inputs accumulate the increments
            p, w = u_prev[0] + d_p0, u_prev[2] + d_w
            track = cfg.alpha * (trg.p_im_trg - p) ** 2 + cfg.gamma * (trg.w_inj_trg - w)
            nox1 = a * x0 + b * chi0 + c
            nox2 = a * nox1 + b * chi1 + c
            cost = (3 * track + cfg.beta * ((trg.chi_egr_trg - chi0) ** 2 + 2 * (trg.chi_egr_trg - chi1) ** 2)
                    + cfg.eta * (x0 + nox1 + nox2)
                    + cfg.R[0] * d_p0 ** 2 + cfg.R[1] * (g0 ** 2 + g1 ** 2) + cfg.R[2] * d_w ** 2)
            best = min(best, float(cost.min()))
    elapsed = time.perf_counter() - t0
    ok = sol.objective <= best + 1e-4 and elapsed < 60.0
    assert acceptance_record(4, "OCP brute-force oracle", ok,
                             f"solver {sol.objective:.6f} vs grid {best:.6f}, {elapsed:.2f} s")


def test_05_offset_free_inner_loop(acceptance_record):
    errs = []
    for point in INNER_LOOP_POINTS:
        op, trg = reachable_targets(CFG, *point)
        last = track_constant_targets(CFG, op, trg, seconds=10.0)[-1]
        errs.append((abs(last[0] - trg.p_im_trg), abs(last[1] - trg.chi_egr_trg)))
    errs = np.array(errs)
    ok = bool(np.all(errs[:, 0] < 0.5) and np.all(errs[:, 1] < 0.005))
    assert acceptance_record(5, "offset-free inner loop", ok,
                             f"max |dp| {errs[:, 0].max():.2e} kPa, max |dchi| {errs[:, 1].max():.2e}")


def test_06_fuel_bound(full_run, acceptance_record):
    cycles = {c for _, c in full_run.results}
    ok = full_run.fuel_bound_violations == 0 and {"case_study", *BUNDLED_CYCLES} <= cycles
    assert acceptance_record(6, "fuel-bound invariant", ok,
                             f"{full_run.fuel_bound_violations} violations over {sorted(cycles)}")


def test_07_case_study_nox_ordering(trained_stack, full_run, acceptance_record):
    t0 = time.perf_counter()
    nox = {}
    for tag in ("baseline", *EMPC_TAGS):
        res = run_scenario(ScenarioConfig(tag, "case_study", soot_lim=full_run.soot_lim), trained_stack)
        nox[tag] = res.metrics.cumulative_nox
    elapsed = time.perf_counter() - t0
    base = nox["baseline"]
    ok = (nox["B"] < nox["D"] <= nox["A"] < base and (base - nox["B"]) / base >= 0.005 and elapsed < 300.0)
    pct = {k: 100 * (v - base) / base for k, v in nox.items() if k != "baseline"}
    detail = ", ".join(f"{k} {v:+.2f}%" for k, v in pct.items()) + f"; {elapsed:.0f} s"
    assert acceptance_record(7, "case-study NOx ordering", ok, detail)


def test_08_soot_violations_d_vs_b(full_run, acceptance_record):
    b, d = full_run.results[("B", "case_study")], full_run.results[("D", "case_study")]
    ok = d.violation_ratio < b.violation_ratio and d.peak_soot < b.peak_soot
    assert acceptance_record(8, "Soot violation D < B", ok,
                             f"violations {d.violation_ratio:.2f}% vs {b.violation_ratio:.2f}%, "
                             f"peak {d.peak_soot:.3f} vs {b.peak_soot:.3f}")


def test_09_soot_constraint_efficacy(full_run, acceptance_record):
    cuts = {}
    for c in BUNDLED_CYCLES:
        base, cc = full_run.results[("baseline", c)].peak_soot, full_run.results[("C", c)].peak_soot
        cuts[c] = 100 * (base - cc) / base
    ok = all(v >= 2.0 for v in cuts.values())
    assert acceptance_record(9, "Soot constraint lowers peak", ok,
                             ", ".join(f"{c} -{v:.2f}%" for c, v in cuts.items()))


def test_10_model_quality(full_run, acceptance_record):
    data = _merged(CFG, full_run.stage_dirs["data"])
    fnn = load_params(full_run.stage_dirs["fnn"] / "fnn.json")
    rep = evaluate_model(fnn, data, "test")
    nox_range = float(np.ptp(data.targets[:, 0]))
    fnn_ok = rep.nox_mae <= 0.05 * nox_range and rep.soot_mae <= 2.0
    val = json.loads((full_run.stage_dirs["rnn"] / "rnn_validation.json").read_text())
    shares = {k: v["nox_mae"] / v["nox_range"] for k, v in val.items() if isinstance(v, dict)}
    rnn_ok = bool(shares) and all(s <= 0.10 for s in shares.values())
    detail = (f"FNN NOx MAE {rep.nox_mae:.2f} ppm ({100 * rep.nox_mae / nox_range:.2f}% of range), "
              f"Soot MAE {rep.soot_mae:.3f}; RNN " + ", ".join(f"{k} {100 * s:.1f}%" for k, s in shares.items()))
    assert acceptance_record(10, "model quality gates", fnn_ok and rnn_ok, detail)


def test_11_solver_budget(full_run, acceptance_record):
    stats = [v for (tag, c), v in full_run.solver.items() if c in BUNDLED_CYCLES]
    calls = sum(s["calls"] for s in stats)
    converged = sum(s["converged"] for s in stats)
    slowest = max(s["max_solve_time"] for s in stats)
    ok = len(stats) == 2 * len(EMPC_TAGS) and slowest <= 0.2 and converged / calls >= 0.95
    assert acceptance_record(11, "solver budget", ok,
                             f"max solve {slowest * 1e3:.1f} ms, converged {100 * converged / calls:.2f}%")


def test_12_pipeline_determinism(tmp_path, acceptance_record):
    quick = CFG.with_overrides(QUICK_OVERRIDES)
    a = run_pipeline(quick, tmp_path / "a")
    b = run_pipeline(quick, tmp_path / "b")
    same = all((a.out_dir / f"comparison_{c}.csv").read_bytes() == (b.out_dir / f"comparison_{c}.csv").read_bytes()
               for c in a.tables)
    assert acceptance_record(12, "pipeline determinism", same and a.tables.keys() == b.tables.keys(),
                             f"tables {sorted(a.tables)} byte-identical: {same}")
