import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dieselempc.config import load_config
from dieselempc.errors import DomainError
from dieselempc.harness import (CASE_STUDY_EVENTS, METRIC_FIELDS, Metrics, ScenarioConfig, Stack, case_study_trace,
                                compare_scenarios, compute_metrics, cumulative_nox, format_change,
                                relative_change, resolve_cycle, run_scenario, violation_ratio)
from dieselempc.ident import DriveCycle, write_cycle_csv
from dieselempc.nn import fnn_architecture
from oracles import linear_rnn, random_net

CFG = load_config()


def metrics(**over):
    base = dict(cumulative_nox=1000.0, peak_nox=400.0, average_nox=200.0, average_soot=1.0, peak_soot=3.0,
                violation_ratio=10.0, total_fuel=500.0)
    return Metrics(**{**base, **over})


class TestCumulativeNox:
    def test_rectangle(self):
        assert cumulative_nox(np.full(6, 10.0), np.full(6, 100.0), 0.2) == pytest.approx(1000.0, rel=1e-14)

    def test_zero_flow(self):
        assert cumulative_nox(np.zeros(20), np.full(20, 300.0), 0.2) == 0.0

    def test_ramp_is_integrated_exactly(self):
        t = np.arange(51) * 0.2
        assert cumulative_nox(np.ones(51), t, 0.2) == pytest.approx(10.0 ** 2 / 2, rel=1e-13)

    def test_single_sample(self):
        assert cumulative_nox([3.0], [4.0], 0.2) == 0.0

    def test_bad_lengths(self):
        with pytest.raises(DomainError):
            cumulative_nox([1.0, 2.0], [1.0], 0.2)
        with pytest.raises(DomainError):
            cumulative_nox([], [], 0.2)


class TestViolationRatio:
    def test_none_all_half(self):
        soot = np.array([1.0, 3.0, 1.0, 3.0])
        assert violation_ratio(soot, 5.0) == 0.0
        assert violation_ratio(soot, 0.5) == 100.0
        assert violation_ratio(soot, 2.0) == 50.0

    def test_equality_is_not_a_violation(self):
        assert violation_ratio([2.0, 2.0], 2.0) == 0.0

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=50), st.floats(0, 10))
    def test_bounds(self, soot, lim):
        assert 0.0 <= violation_ratio(soot, lim) <= 100.0

    def test_empty(self):
        with pytest.raises(DomainError):
            violation_ratio([], 1.0)


def test_compute_metrics_fuel_and_peaks():
    rows = {"nox": [100.0, 300.0], "soot": [1.0, 2.0], "w_ext": [10.0, 10.0], "fuel_flow": [3.6, 3.6]}
    m = compute_metrics(rows, 0.5, 1.5)
    assert m.total_fuel == pytest.approx(2 * 3.6 * 0.5 * 1e6 / 3600.0)
    assert (m.peak_nox, m.average_nox, m.peak_soot, m.violation_ratio) == (300.0, 200.0, 2.0, 50.0)


class TestCompare:
    def test_against_itself(self):
        t = compare_scenarios([("baseline", "c", metrics()), ("A", "c", metrics())])
        assert all(t.rows[1][f + "_change"] == "0.000%" for f in METRIC_FIELDS)

    def test_halving_nox(self):
        t = compare_scenarios([("baseline", "c", metrics()), ("B", "c", metrics(cumulative_nox=500.0))])
        assert t.rows[1]["cumulative_nox_change"] == "↓50.000%"

    def test_increase_arrow(self):
        assert format_change(relative_change(3.3, 3.0)) == "↑10.000%"
        assert relative_change(0.0, 0.0) == 0.0
        assert relative_change(1.0, 0.0) == np.inf

    def test_mismatched_cycles(self):
        with pytest.raises(DomainError):
            compare_scenarios([("baseline", "a", metrics()), ("A", "b", metrics())])

    def test_missing_baseline(self):
        with pytest.raises(DomainError):
            compare_scenarios([("A", "c", metrics())])

    def test_text_and_csv(self, tmp_path):
        t = compare_scenarios([("baseline", "c", metrics()), ("D", "c", metrics(peak_soot=2.7))])
        text = t.to_text()
        assert "reference" in text and "↓10.000%" in text
        with t.write_csv(tmp_path / "t.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows[1]["scenario"] == "D" and float(rows[1]["peak_soot"]) == 2.7


class TestCycles:
    def test_case_study_shape(self):
        c = case_study_trace()
        assert c.t[-1] == pytest.approx(45.0) and c.dt == pytest.approx(0.2)
        assert c.w_inj_trg[int(5.0 / 0.2)] > c.w_inj_trg[int(5.0 / 0.2) - 1]
        assert c.n_e[0] == 1500.0 and c.n_e[-1] == 2000.0
        assert CASE_STUDY_EVENTS == (5.0, 15.0, 25.0)

    def test_resolve(self, tmp_path):
        assert resolve_cycle("case_study").name == "case_study"
        assert resolve_cycle("urban").name == "urban"
        path = write_cycle_csv(resolve_cycle("highway").head(10), tmp_path / "hw.csv")
        assert len(resolve_cycle(str(path))) == 10


def short_cycle(n=25):
    t = np.arange(n) * 0.2
    w = np.where(t < 2.0, 40.0, 80.0)
    return DriveCycle("short", t, np.full(n, 1500.0), w)


def stack():
    return Stack(CFG, random_net(*fnn_architecture(), seed=1, with_norm=False), linear_rnn(0.6, -800.0, 200.0))


class TestRunScenario:
    def test_baseline_passes_targets_through(self, tmp_path):
        res = run_scenario(ScenarioConfig("baseline", short_cycle(), output_dir=str(tmp_path)), stack())
        np.testing.assert_array_equal(res.log["w_inj"], res.log["w_inj_trg"])
        np.testing.assert_array_equal(res.log["p_im_adj"], res.log["p_im_trg"])
        assert res.diagnostics == [] and res.fuel_bound_violations == 0
        assert (tmp_path / "baseline_short_trajectory.csv").exists()

    def test_empc_keeps_fuel_in_band(self, tmp_path):
        res = run_scenario(ScenarioConfig("B", short_cycle(), output_dir=str(tmp_path)), stack())
        w, w_trg = np.array(res.log["w_inj"]), np.array(res.log["w_inj_trg"])
        assert res.fuel_bound_violations == 0
        assert np.all(w <= w_trg + 1e-9) and np.all(w >= 0.9 * w_trg - 1e-9)
        assert len(res.diagnostics) == len(w)
        assert (tmp_path / "B_short_solver.csv").exists()

    def test_deterministic(self):
        a = run_scenario(ScenarioConfig("D", short_cycle(), soot_lim=1.0), stack())
        b = run_scenario(ScenarioConfig("D", short_cycle(), soot_lim=1.0), stack())
        assert a.metrics == b.metrics
        assert a.log == b.log

    def test_scenario_configs(self):
        s = stack()
        assert s.scenario_ocp(ScenarioConfig("baseline")) is None
        assert s.scenario_ocp(ScenarioConfig("C", soot_lim=1.5)).soot_lim == 1.5
        assert s.scenario_ocp(ScenarioConfig("custom", ocp_overrides={"eta": 3.0, "N": 4})).N == 4
        with pytest.raises(DomainError):
            s.scenario_ocp(ScenarioConfig("C"))
        with pytest.raises(DomainError):
            ScenarioConfig("E")
