import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dieselempc.errors import DomainError, NumericError, StructuralError
from dieselempc.nn import (Gradient, Layer, NnParams, Normalization, fnn_architecture, forward_normalized,
                           net_view, rnn_architecture, rnn_step_array)
from dieselempc.training import (
    Dataset, Episode, HyperParams, TrajectoryDataset, apply_lr_decay, epoch_batches, evaluate_model,
    fit_fnn_normalization, grid_search, horizon_loss_grad, make_windows, merge_emissions_datasets,
    mse_loss, read_dataset_csv, read_trajectories_csv, sgd_momentum_step, split_dataset,
    split_trajectory, train_fnn, train_rnn_horizon, write_dataset_csv, write_trajectories_csv,
)
from oracles import central_fd, linear_rnn, max_rel_error, random_net


def emissions_set(n, seed=0, soot=None, prov="steady_state"):
    rng = np.random.default_rng(seed)
    y = np.column_stack([rng.uniform(50, 900, n), rng.uniform(0, 5, n) if soot is None else soot])
    return Dataset.from_arrays(rng.normal(size=(n, 10)), y, prov)


def episode(name, n, seed=0, dt=0.2):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    return Episode(name, dt, t, rng.normal(size=(n, 4)), rng.normal(size=(n, 2)))


class TestMomentum:
    def test_rho_zero_is_plain_sgd(self):
        net = random_net(*fnn_architecture(), seed=0)
        g = Gradient.from_flat(net, np.random.default_rng(1).normal(size=net.n_params))
        hp = HyperParams(learning_rate=0.1, momentum=0.0)
        new, _ = sgd_momentum_step(net, g, Gradient.zeros_like(net), hp)
        np.testing.assert_array_equal(new.flat(), net.flat() - 0.1 * g.flat())

    @pytest.mark.parametrize("rho", [0.5, 0.9, 0.99])
    def test_constant_gradient_velocity_closed_form(self, rho):
        net = random_net([3, 2], ["identity"], seed=0)
        g = Gradient.from_flat(net, np.linspace(-1, 1, net.n_params))
        hp = HyperParams(learning_rate=1e-3, momentum=rho)
        v = None
        for k in range(1, 51):
            net, v = sgd_momentum_step(net, g, v, hp)
            np.testing.assert_allclose(v.flat(), g.flat() * (1 - rho ** k) / (1 - rho), rtol=1e-12, atol=0)

    def test_zero_lr_keeps_params_and_accumulates(self):
        net = random_net([3, 2], ["identity"], seed=0)
        g = Gradient.from_flat(net, np.ones(net.n_params))
        hp = HyperParams(momentum=0.5)
        new, v = sgd_momentum_step(net, g, None, hp, lr=0.0)
        new, v = sgd_momentum_step(new, g, v, hp, lr=0.0)
        np.testing.assert_array_equal(new.flat(), net.flat())
        np.testing.assert_array_equal(v.flat(), 1.5 * np.ones(net.n_params))

    def test_non_finite_gradient(self):
        net = random_net([3, 2], ["identity"], seed=0)
        g = Gradient(tuple(np.full_like(l.weight, np.nan) for l in net.layers),
                     tuple(np.zeros_like(l.bias) for l in net.layers))
        with pytest.raises(NumericError):
            sgd_momentum_step(net, g, None, HyperParams())

    def test_incongruent_velocity(self):
        net = random_net([3, 2], ["identity"], seed=0)
        other = random_net([4, 2], ["identity"], seed=0)
        with pytest.raises(StructuralError):
            sgd_momentum_step(net, Gradient.zeros_like(net), Gradient.zeros_like(other), HyperParams())


class TestDecay:
    @pytest.mark.parametrize("epoch,factor", [(0, 1.0), (99, 1.0), (100, 0.5), (250, 0.25)])
    def test_step_schedule(self, epoch, factor):
        hp = HyperParams(learning_rate=1e-4, decay_factor=0.5, decay_period=100)
        assert apply_lr_decay(hp, epoch) == 1e-4 * factor

    @given(st.integers(0, 10_000), st.integers(1, 500))
    def test_monotone_nonincreasing(self, e, period):
        hp = HyperParams(learning_rate=1e-2, decay_factor=0.7, decay_period=period)
        assert apply_lr_decay(hp, e + 1) <= apply_lr_decay(hp, e)

    def test_negative_epoch(self):
        with pytest.raises(DomainError):
            apply_lr_decay(HyperParams(), -1)


class TestLoss:
    def test_perfect_network_has_zero_loss(self):
        net = NnParams((Layer(np.zeros((2, 10)), np.zeros(2), "identity"),), Normalization.identity(10, 2))
        data = Dataset.from_arrays(np.ones((5, 10)), np.zeros((5, 2)), "synthetic")
        assert mse_loss(net, data) == 0.0

    def test_single_record_error(self):
        net = NnParams((Layer(np.zeros((2, 10)), [0.0, 0.0], "identity"),), Normalization.identity(10, 2))
        data = Dataset.from_arrays(np.ones((1, 10)), [[0.0, 3.0]], "synthetic")
        assert mse_loss(net, data) == 9.0

    def test_matches_hand_accumulation(self):
        net = random_net(*fnn_architecture(), seed=2)
        data = emissions_set(40, seed=3)
        acc = 0.0
        for x, y in zip(data.inputs, data.targets):
            z = (x - net.norm.in_offset) / net.norm.in_scale
            r = forward_normalized(net, z) - (y - net.norm.out_offset) / net.norm.out_scale
            acc += r[0] ** 2 + r[1] ** 2
        assert mse_loss(net, data) == pytest.approx(acc / 40, rel=1e-12)

    def test_empty(self):
        net = random_net(*fnn_architecture(), seed=2)
        with pytest.raises(DomainError):
            mse_loss(net, emissions_set(3).subset(np.zeros(3, bool)))


class TestDatasets:
    def test_all_heavy_soot_steady_records_dropped(self):
        steady = emissions_set(10, soot=np.full(10, 30.0))
        trans = emissions_set(7, seed=1, prov="transient")
        merged = merge_emissions_datasets(steady, trans, 20.0)
        np.testing.assert_array_equal(merged.inputs, trans.inputs)

    def test_cutoff_100_is_plain_union(self):
        merged = merge_emissions_datasets(emissions_set(10), emissions_set(7, 1, prov="transient"), 100.0)
        assert len(merged) == 17

    def test_mixed_count(self):
        soot = np.array([5.0, 25.0, 20.0, 19.9, 40.0, 0.0])
        merged = merge_emissions_datasets(emissions_set(6, soot=soot), emissions_set(4, 1, prov="transient"))
        assert len(merged) == 4 + 4
        assert sorted(set(merged.provenance)) == ["steady_state", "transient"]

    def test_schema_mismatch(self):
        bad = Dataset.from_arrays(np.ones((3, 9)), np.ones((3, 2)), "steady_state")
        with pytest.raises(StructuralError):
            merge_emissions_datasets(bad, emissions_set(2, prov="transient"))

    def test_split_counts_and_determinism(self):
        d = emissions_set(100)
        a, b = split_dataset(d, seed=4), split_dataset(d, seed=4)
        assert [np.sum(a.split == s) for s in ("train", "validation", "test")] == [70, 15, 15]
        np.testing.assert_array_equal(a.split, b.split)

    def test_split_fractions_must_sum_to_one(self):
        with pytest.raises(DomainError):
            split_dataset(emissions_set(10), (0.7, 0.2, 0.2))

    def test_trajectory_test_slice_is_final_contiguous(self):
        parts = split_trajectory(TrajectoryDataset((episode("wh", 1000),)))
        test = parts["test"].episodes[0]
        # steps are 1-based in the usual reading: steps 851..1000 are indices 850..999
        np.testing.assert_array_equal(test.t, np.arange(850, 1000) * 0.2)
        assert len(parts["train"].episodes[0]) == 700 and len(parts["validation"].episodes[0]) == 150

    def test_non_uniform_episode_rejected(self):
        ep = episode("x", 5)
        bad = Episode("x", 0.2, np.array([0, 0.2, 0.5, 0.6, 0.8]), ep.u, ep.x)
        with pytest.raises(DomainError):
            TrajectoryDataset((bad,))

    @given(st.integers(1, 200), st.integers(1, 64), st.integers(0, 1000))
    @settings(max_examples=50)
    def test_batches_partition_indices(self, n, bs, seed):
        batches = epoch_batches(n, bs, np.random.default_rng(seed))
        allidx = np.concatenate(batches)
        assert sorted(allidx.tolist()) == list(range(n))
        assert all(len(b) <= bs for b in batches)

    def test_csv_round_trip(self, tmp_path):
        d = split_dataset(merge_emissions_datasets(emissions_set(8), emissions_set(5, 1, prov="transient")))
        back = read_dataset_csv(write_dataset_csv(d, tmp_path / "d.csv"))
        np.testing.assert_array_equal(back.inputs, d.inputs)
        np.testing.assert_array_equal(back.targets, d.targets)
        assert list(back.split) == list(d.split) and list(back.provenance) == list(d.provenance)

    def test_trajectory_csv_round_trip(self, tmp_path):
        ds = TrajectoryDataset((episode("a", 6), episode("b", 4, seed=1)))
        back = read_trajectories_csv(write_trajectories_csv(ds, tmp_path / "t.csv"))
        for e1, e2 in zip(ds.episodes, back.episodes):
            assert e1.name == e2.name
            np.testing.assert_array_equal(e1.u, e2.u)
            np.testing.assert_array_equal(e1.x, e2.x)


class TestTrainFnn:
    def test_single_step_oracle(self):
        w0, b0 = np.array([[0.5, -1.0], [0.25, 2.0]]), np.array([0.1, -0.2])
        init = NnParams((Layer(w0, b0, "identity"),), Normalization.identity(2, 2))
        x, t = np.array([1.0, 2.0]), np.array([3.0, -1.0])
        data = Dataset.from_arrays(x[None], t[None], "synthetic")
        hp = HyperParams(learning_rate=0.05, momentum=0.0, epochs=1, batch_size=1)
        res = train_fnn(data, hp, init=init)
        r = w0 @ x + b0 - t
        np.testing.assert_allclose(res.params.layers[0].weight, w0 - 0.05 * 2 * np.outer(r, x), rtol=1e-15)
        np.testing.assert_allclose(res.params.layers[0].bias, b0 - 0.05 * 2 * r, rtol=1e-15)

    def test_reproducible(self):
        data = split_dataset(emissions_set(60))
        hp = HyperParams(learning_rate=1e-2, epochs=3, batch_size=16)
        a, b = train_fnn(data, hp, seed=1, hidden=(8, 4)), train_fnn(data, hp, seed=1, hidden=(8, 4))
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())
        assert len(a.curves) == 3 and all(math.isfinite(c[2]) for c in a.curves)

    def test_divergence_keeps_finite_checkpoint(self):
        data = emissions_set(30)
        res = train_fnn(data, HyperParams(learning_rate=1e6, epochs=5, batch_size=10), hidden=(8,))
        assert res.diverged
        assert np.all(np.isfinite(res.params.flat()))

    def test_output_normalization_is_scale_only(self):
        norm = fit_fnn_normalization(emissions_set(20))
        np.testing.assert_array_equal(norm.out_offset, [0.0, 0.0])
        assert np.all(norm.out_scale > 0)


class TestGridSearch:
    def test_one_cell(self):
        d = split_dataset(emissions_set(40))
        rep = grid_search([(0.9, 1e-3)], d.part("train"), d.part("validation"), hidden=(4,))
        assert rep.best == (0.9, 1e-3)

    def test_divergent_cell_is_inf_and_never_best(self):
        d = split_dataset(emissions_set(60))
        # smaller steps only kill every ReLU unit (finite loss); this one overflows the parameters
        rep = grid_search([(0.9, 1e9), (0.9, 1e-3), (0.5, 1e-2)], d.part("train"), d.part("validation"),
                          hidden=(8,))
        losses = {(r, l): v for r, l, v in rep.grid}
        assert losses[(0.9, 1e9)] == math.inf
        assert rep.best != (0.9, 1e9)
        assert losses[rep.best] == min(losses.values())

    def test_heatmap_written(self, tmp_path):
        d = split_dataset(emissions_set(40))
        rep = grid_search([(0.9, 1e-3), (0.5, 1e-3)], d.part("train"), d.part("validation"), hidden=(4,),
                          heatmap_path=tmp_path / "h.csv")
        assert len(rep.heatmap_path.read_text().strip().splitlines()) == 3

    def test_empty_grid(self):
        d = split_dataset(emissions_set(20))
        with pytest.raises(DomainError):
            grid_search([], d.part("train"), d.part("validation"))


class TestHorizonTraining:
    def _linear_data(self, n=40):
        net = linear_rnn(0.8, 100.0, 5.0)
        rng = np.random.default_rng(0)
        u = np.column_stack([rng.uniform(100, 200, n), rng.uniform(0, 0.4, n),
                             np.full(n, 1500.0), rng.uniform(10, 90, n)])
        x = np.zeros((n, 2))
        x[0] = [40.0, 0.0]
        for k in range(n - 1):
            x[k + 1] = rnn_step_array(net, x[k], u[k])
        return net, TrajectoryDataset((Episode("lin", 0.2, np.arange(n) * 0.2, u, x),))

    def test_zero_error_oracle(self):
        net, data = self._linear_data()
        win, _ = make_windows(data, 5)
        loss, grad = horizon_loss_grad(net, net_view(net, net.flat()), win)
        assert loss == pytest.approx(0.0, abs=1e-20)
        assert np.max(np.abs(grad)) < 1e-9

    def test_horizon_one_is_teacher_forced(self):
        net = random_net(*rnn_architecture(), seed=1)
        data = TrajectoryDataset((episode("e", 30, seed=2),))
        win, _ = make_windows(data, 1)
        loss, _ = horizon_loss_grad(net, net_view(net, net.flat()), win, need_grad=False)
        ep = data.episodes[0]
        r = [(rnn_step_array(net, ep.x[k], ep.u[k]) - ep.x[k + 1]) / net.norm.out_scale for k in range(29)]
        assert loss == pytest.approx(float(np.mean(np.sum(np.square(r), axis=1))), rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_fd(self, seed):
        net = random_net(*rnn_architecture(), seed=seed)
        win, _ = make_windows(TrajectoryDataset((episode("e", 12, seed=seed),)), 4)
        _, grad = horizon_loss_grad(net, net_view(net, net.flat()), win)
        fd = central_fd(lambda th: horizon_loss_grad(net, net_view(net, th), win, need_grad=False)[0],
                        net.flat())
        assert max_rel_error(grad, fd[0]) <= 1e-6

    def test_short_episodes_skipped(self):
        win, skipped = make_windows(TrajectoryDataset((episode("a", 3), episode("b", 10))), 4)
        assert skipped == 1 and len(win) == 6

    def test_training_reduces_loss(self):
        _, data = self._linear_data(200)
        res = train_rnn_horizon(data, 4, HyperParams(learning_rate=1e-2, epochs=15, batch_size=20),
                                hidden=(6, 3))
        assert res.curves[-1][1] < res.curves[0][1]


class TestEvaluate:
    def test_perfect_predictor(self):
        net = NnParams((Layer(np.zeros((2, 10)), [10.0, 1.0], "identity"),), Normalization.identity(10, 2))
        d = Dataset.from_arrays(np.ones((4, 10)), np.tile([10.0, 1.0], (4, 1)), "transient")
        rep = evaluate_model(net, d, split=None)
        assert (rep.nox_mae, rep.soot_mae, rep.mse) == (0.0, 0.0, 0.0)

    def test_constant_offset(self):
        net = NnParams((Layer(np.zeros((2, 10)), [10.0, 1.0], "identity"),), Normalization.identity(10, 2))
        d = Dataset.from_arrays(np.ones((4, 10)), np.tile([13.0, 0.5], (4, 1)), "transient")
        rep = evaluate_model(net, d, split=None)
        assert rep.nox_mae == 3.0 and rep.soot_mae == 0.5
        assert rep.by_provenance["transient"]["n"] == 4

    def test_empty_split(self):
        net = random_net(*fnn_architecture(), seed=0)
        with pytest.raises(DomainError):
            evaluate_model(net, emissions_set(5), "test")
