"""Optimizer behavior, training-loop determinism, and the evaluation
metrics (earliest-spike prediction and hidden-layer sparsity)."""

import numpy as np
import pytest

from ttfsnet import (
    AdamState,
    CostConfig,
    NeuronModelConfig,
    TrainConfig,
    Variant,
    adam_step,
    build_network,
    evaluate,
    forward_batch,
    train,
)
from ttfsnet.training import predict, sparsity_from_trace

from conftest import model_for


def toy_problem(n=96, n_in=8, n_classes=3, seed=4):
    """Linearly separable spike-time clusters: class k spikes early on
    inputs [2k, 2k+1] and late elsewhere."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    times = rng.uniform(3.0, 4.0, size=(n, n_in))
    for k in range(n_classes):
        rows = labels == k
        times[np.ix_(rows, [2 * k, 2 * k + 1])] = rng.uniform(
            0.0, 0.5, size=(rows.sum(), 2))
    return times, labels


class TestAdam:
    def test_first_step_moves_by_eta_for_large_gradients(self):
        p = np.zeros(3)
        state = AdamState.for_params([p], eta=1e-2)
        adam_step(state, [p], [np.array([0.5, -0.5, 2.0])])
        np.testing.assert_allclose(p, [-1e-2, 1e-2, -1e-2], rtol=1e-6)

    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = np.full(4, 7.0)
        state = AdamState.for_params([p])
        adam_step(state, [p], [np.zeros(4)])
        np.testing.assert_array_equal(p, np.full(4, 7.0))

    def test_moments_accumulate_across_steps(self):
        p = np.zeros(1)
        g = np.array([1.0])
        state = AdamState.for_params([p], eta=1e-3)
        for _ in range(5):
            adam_step(state, [p], [g])
        assert state.step == 5
        # constant gradient: bias-corrected m/sqrt(v) stays 1, so each
        # step subtracts eta (up to eps)
        assert p[0] == pytest.approx(-5e-3, rel=1e-5)

    def test_count_mismatch_raises(self):
        p = np.zeros(2)
        state = AdamState.for_params([p])
        with pytest.raises(ValueError):
            adam_step(state, [p, p], [np.zeros(2), np.zeros(2)])


class TestPrediction:
    def _trace(self, out_times):
        class Rec:
            def __init__(self, t):
                self.out_times = t

        class Trace:
            def __init__(self, t):
                self.records = [Rec(t)]

            @property
            def output_times(self):
                return self.records[-1].out_times

        return Trace(np.asarray(out_times, dtype=np.float64))

    def test_earliest_spike_wins(self):
        trace = self._trace([[3.0, 1.0, 2.0]])
        assert predict(trace, 8.0).tolist() == [1]

    def test_tie_goes_to_the_lowest_index(self):
        trace = self._trace([[2.0, 1.5, 1.5]])
        assert predict(trace, 8.0).tolist() == [1]

    def test_all_silent_lands_on_class_zero(self):
        trace = self._trace([[np.inf, np.inf, np.inf]])
        assert predict(trace, 8.0).tolist() == [0]

    def test_silent_output_loses_to_any_spike_before_surrogate(self):
        trace = self._trace([[np.inf, 15.9]])
        assert predict(trace, 8.0).tolist() == [1]


class TestSparsity:
    def test_counts_only_spikes_strictly_before_t_ref(self):
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("2-2-2", (2,), model, seed=0)
        arrays = spec.weight_arrays()
        # one neuron at exactly t_ref, one before it
        arrays[0][:] = [[0.25, 0.25], [1.0, 1.0]]
        arrays[1][:] = [[0.5, 0.5], [0.5, 0.5]]
        trace = forward_batch(spec, np.zeros((1, 2)), 16.0)
        tout = trace.records[0].out_times[0]
        np.testing.assert_allclose(tout, [2.0, 0.5])
        assert sparsity_from_trace(trace, 2.0) == (0.5,)
        assert sparsity_from_trace(trace, 2.0 + 1e-9) == (1.0,)

    def test_pooling_layers_are_not_counted(self):
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("Conv(3,2)-Pool-4-3", (6, 6, 1), model, seed=1)
        rng = np.random.default_rng(2)
        trace = forward_batch(spec, rng.uniform(0, 2, (2, 36)), 16.0)
        per_layer = sparsity_from_trace(trace, 8.0)
        assert len(per_layer) == 2  # conv layer and the hidden dense layer

    def test_evaluate_matches_manual_counting(self):
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("8-6-3", (8,), model, seed=5)
        times, labels = toy_problem()
        cfg = TrainConfig(cost=CostConfig(t_ref=4.0))
        acc, per_layer, mean_sp = evaluate(spec, times, labels, cfg,
                                           batch_size=17)
        trace = forward_batch(spec, times, cfg.sweep_horizon)
        pred = predict(trace, 4.0)
        assert acc == pytest.approx(np.mean(pred == labels))
        np.testing.assert_allclose(per_layer,
                                   sparsity_from_trace(trace, 4.0))
        assert mean_sp == pytest.approx(np.mean(per_layer))


class TestTrainingLoop:
    def test_deterministic_given_seed(self):
        times, labels = toy_problem()
        cfg = TrainConfig(cost=CostConfig(gamma1=1e-3, t_ref=4.0),
                          eta=1e-3, batch_size=16, epochs=2, seed=7)
        model = model_for(Variant.NON_LEAKY)
        runs = []
        for _ in range(2):
            spec = build_network("8-6-3", (8,), model, seed=1)
            rows = train(spec, times, labels, cfg)
            runs.append((rows, [w.copy() for w in spec.weight_arrays()]))
        (rows_a, w_a), (rows_b, w_b) = runs
        assert [r.train_cost for r in rows_a] == [r.train_cost for r in rows_b]
        for a, b in zip(w_a, w_b):
            np.testing.assert_array_equal(a, b)

    def test_loss_decreases_on_the_toy_problem(self):
        times, labels = toy_problem()
        cfg = TrainConfig(cost=CostConfig(gamma1=1e-3, t_ref=4.0),
                          eta=1e-2, batch_size=16, epochs=30, seed=0)
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("8-6-3", (8,), model, seed=1)
        rows = train(spec, times, labels, cfg)
        assert rows[-1].train_cost < rows[0].train_cost
        assert rows[-1].test_accuracy >= 0.9

    def test_callback_stops_early_and_keeps_the_row(self):
        times, labels = toy_problem()
        cfg = TrainConfig(cost=CostConfig(t_ref=4.0), epochs=50, seed=0)
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("8-6-3", (8,), model, seed=1)
        rows = train(spec, times, labels, cfg,
                     callback=lambda row: row.epoch == 2)
        assert [r.epoch for r in rows] == [1, 2]

    def test_shuffle_off_processes_in_order(self):
        times, labels = toy_problem()
        model = model_for(Variant.NON_LEAKY)
        base = dict(cost=CostConfig(gamma1=1e-3, t_ref=4.0), eta=1e-3,
                    batch_size=32, epochs=1)
        spec_a = build_network("8-6-3", (8,), model, seed=1)
        train(spec_a, times, labels, TrainConfig(shuffle=False, **base))
        spec_b = build_network("8-6-3", (8,), model, seed=1)
        train(spec_b, times, labels, TrainConfig(shuffle=False, **base))
        for a, b in zip(spec_a.weight_arrays(), spec_b.weight_arrays()):
            np.testing.assert_array_equal(a, b)
        spec_c = build_network("8-6-3", (8,), model, seed=1)
        train(spec_c, times, labels, TrainConfig(shuffle=True, **base))
        assert any(
            not np.array_equal(a, c)
            for a, c in zip(spec_a.weight_arrays(), spec_c.weight_arrays()))

    def test_eval_split_defaults_to_training_prefix(self):
        times, labels = toy_problem(n=40)
        cfg = TrainConfig(cost=CostConfig(t_ref=4.0), epochs=1, seed=0)
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("8-6-3", (8,), model, seed=1)
        rows = train(spec, times, labels, cfg)
        acc, _, _ = evaluate(spec, times, labels, cfg)
        assert rows[-1].test_accuracy == pytest.approx(acc)
