"""Gradient checks: analytic firing-time derivatives against finite
differences, layer kernels against the scalar solver's partials, and the
structural zero-gradient guarantees (non-causal inputs, grazing crossings,
unfired neurons)."""

import math

import numpy as np
import pytest

from ttfsnet import (
    CostConfig,
    FiringSolution,
    NeuronModelConfig,
    SpikeVector,
    Variant,
    build_network,
    forward_batch,
    network_backward,
    solve_firing_time,
    total_cost,
)
from ttfsnet.backprop import (
    backward_conv_record,
    backward_dense,
    backward_pool,
    crossing_slope,
    firing_time_partials,
)
from ttfsnet.layers import DenseLayerParams, forward_pool, PoolSpec

from conftest import VARIANTS, HORIZON, model_for, random_instance, gamma_stable


def fd_firing_time(model, w, t, horizon, h=1e-6):
    """Central differences of the firing time in every weight and every
    finite input time.  Returns (dt_dw, dt_dt) with NaN where either probe
    left the fired-and-same-causal-set regime (callers prescreen)."""
    n = w.size
    dw = np.full(n, np.nan)
    dt = np.full(n, np.nan)

    def time_of(wp, tp):
        sol = solve_firing_time(model, wp, SpikeVector(tp), horizon)
        return sol.time if sol.fired else np.nan

    for j in range(n):
        wp = w.copy()
        wp[j] += h
        up = time_of(wp, t)
        wp[j] -= 2 * h
        dn = time_of(wp, t)
        dw[j] = (up - dn) / (2 * h)
        if np.isfinite(t[j]):
            tp = t.copy()
            tp[j] += h
            up = time_of(w, tp)
            tp[j] -= 2 * h
            dn = time_of(w, tp)
            dt[j] = (up - dn) / (2 * h)
        else:
            dt[j] = 0.0
    return dw, dt


class TestPerNeuronPartials:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_partials_match_finite_differences(self, variant):
        model = model_for(variant)
        rng = np.random.default_rng(0xB0 + variant)
        checked = 0
        tried = 0
        h = 1e-6
        while checked < 150 and tried < 4000:
            tried += 1
            w, t = random_instance(rng)
            sol = solve_firing_time(model, w, SpikeVector(t), HORIZON)
            if not sol.fired:
                continue
            if not gamma_stable(model, w, t, h, HORIZON):
                continue
            ad_w, ad_t = firing_time_partials(model, w, SpikeVector(t), sol)
            fd_w, fd_t = fd_firing_time(model, w, t, HORIZON, h)
            scale = np.maximum(np.abs(fd_w), 1.0)
            np.testing.assert_allclose(ad_w, fd_w, atol=1e-5 * scale.max())
            mask = np.isfinite(fd_t)
            scale_t = np.maximum(np.abs(fd_t[mask]), 1.0)
            np.testing.assert_allclose(ad_t[mask], fd_t[mask],
                                       atol=1e-5 * scale_t.max())
            checked += 1
        assert checked == 150

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_unfired_neuron_has_zero_partials(self, variant):
        model = model_for(variant)
        w = np.array([0.05])
        t = np.array([0.0])
        sol = solve_firing_time(model, w, SpikeVector(t), HORIZON)
        assert not sol.fired
        dw, dt = firing_time_partials(model, w, SpikeVector(t), sol)
        assert np.all(dw == 0.0) and np.all(dt == 0.0)

    def test_non_causal_entries_are_exact_zeros(self):
        model = model_for(Variant.NON_LEAKY)
        w = np.array([2.0, 0.7])
        t = np.array([0.0, 5.0])
        sol = solve_firing_time(model, w, SpikeVector(t), HORIZON)
        assert sol.fired and sol.time == 0.5
        dw, dt = firing_time_partials(model, w, SpikeVector(t), sol)
        assert dw[1] == 0.0 and dt[1] == 0.0
        assert dw[0] != 0.0

    def test_grazing_crossing_zeroes_the_partials(self):
        # A hand-built tangency: the crossing slope is exactly zero, so the
        # implicit-function formulas are undefined and the surrogate is 0.
        model = model_for(Variant.ALPHA_SYNAPSE)
        sol = FiringSolution(fired=True, time=1.0,
                             causal_set=np.array([0]), sum_w=3.0,
                             a=1.0, b=2.0 * math.exp(-0.5))
        assert crossing_slope(model, sol) == pytest.approx(0.0)
        dw, dt = firing_time_partials(model, np.array([3.0]),
                                      SpikeVector(np.array([0.0])), sol)
        assert np.all(dw == 0.0) and np.all(dt == 0.0)


class TestLayerBackward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_dense_backward_matches_scalar_partials(self, variant):
        model = model_for(variant)
        rng = np.random.default_rng(7 + variant)
        weights = rng.uniform(-0.5, 1.5, size=(5, 8))
        times = rng.uniform(0.0, 4.0, size=8)
        times[rng.random(8) < 0.2] = np.inf
        layer = DenseLayerParams(weights)
        for k in range(5):
            upstream = np.zeros(5)
            upstream[k] = 1.0
            dw, dtin = backward_dense(layer, model, SpikeVector(times),
                                      upstream, HORIZON)
            sol = solve_firing_time(model, weights[k], SpikeVector(times),
                                    HORIZON)
            ref_w, ref_t = firing_time_partials(model, weights[k],
                                                SpikeVector(times), sol)
            np.testing.assert_allclose(dw[k], ref_w, rtol=1e-12, atol=0)
            np.testing.assert_allclose(dtin, ref_t, rtol=1e-12, atol=0)
            other = np.delete(dw, k, axis=0)
            assert np.all(other == 0.0)

    def test_pool_backward_scatters_to_winners(self):
        spec = PoolSpec((4, 4, 1))
        rng = np.random.default_rng(3)
        times = rng.uniform(0.0, 4.0, size=(4, 4, 1))
        pooled, route = forward_pool(spec, SpikeVector(times))
        upstream = np.arange(1.0, 5.0)
        dtin = backward_pool(route, upstream, (4, 4, 1))
        assert dtin.shape == (4, 4, 1)
        flat = dtin.reshape(-1)
        np.testing.assert_array_equal(np.sort(flat[route.reshape(-1)]),
                                      np.sort(upstream))
        mask = np.ones(16, bool)
        mask[route.reshape(-1)] = False
        assert np.all(flat[mask] == 0.0)


def stable_under_weight_probe(spec, times, layer_pos, coord, h, horizon):
    """True if nudging one weight coordinate by +/-h leaves every layer's
    fired pattern unchanged (the piecewise-smooth regime for central FD)."""
    arrays = spec.weight_arrays()
    base = forward_batch(spec, times, horizon)
    patterns = [r.fired.copy() for r in base.spiking_records()]
    ok = True
    for sgn in (h, -2 * h):
        arrays[layer_pos].flat[coord] += sgn
        probe = forward_batch(spec, times, horizon)
        for pat, rec in zip(patterns, probe.spiking_records()):
            if not np.array_equal(pat, rec.fired):
                ok = False
    arrays[layer_pos].flat[coord] += h
    return ok


def cost_value(spec, times, labels, cfg, horizon):
    trace = forward_batch(spec, times, horizon)
    return total_cost(trace, labels, cfg)[0].C


class TestNetworkGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_mlp_cost_gradient_matches_fd(self, variant):
        model = model_for(variant)
        spec = build_network("12-9-4", (12,), model, seed=11 + variant)
        rng = np.random.default_rng(31 + variant)
        times = rng.uniform(0.0, 3.0, size=(3, 12))
        labels = np.array([0, 2, 3])
        cfg = CostConfig(gamma1=0.02, t_ref=4.0, tau_soft=0.9)
        horizon = 2 * cfg.t_ref
        trace = forward_batch(spec, times, horizon)
        report, grads = total_cost(trace, labels, cfg)
        arrays = spec.weight_arrays()
        h = 1e-6
        checked = 0
        for li, arr in enumerate(arrays):
            for coord in rng.choice(arr.size, size=8, replace=False):
                if not stable_under_weight_probe(spec, times, li, coord, h,
                                                 horizon):
                    continue
                arr.flat[coord] += h
                up = cost_value(spec, times, labels, cfg, horizon)
                arr.flat[coord] -= 2 * h
                dn = cost_value(spec, times, labels, cfg, horizon)
                arr.flat[coord] += h
                fd = (up - dn) / (2 * h)
                ad = grads.weight_grads[li].flat[coord]
                assert ad == pytest.approx(fd, rel=1e-4, abs=1e-8)
                checked += 1
        assert checked >= 10

    def test_conv_pool_cost_gradient_matches_fd(self):
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("Conv(3,2)-Pool-6-4", (6, 6, 1), model, seed=5)
        rng = np.random.default_rng(17)
        times = rng.uniform(0.0, 3.0, size=(2, 36))
        labels = np.array([1, 3])
        cfg = CostConfig(gamma1=0.02, t_ref=4.0)
        horizon = 2 * cfg.t_ref
        trace = forward_batch(spec, times, horizon)
        report, grads = total_cost(trace, labels, cfg)
        arrays = spec.weight_arrays()
        h = 1e-6
        checked = 0
        for li, arr in enumerate(arrays):
            for coord in rng.choice(arr.size, size=6, replace=False):
                if not stable_under_weight_probe(spec, times, li, coord, h,
                                                 horizon):
                    continue
                arr.flat[coord] += h
                up = cost_value(spec, times, labels, cfg, horizon)
                arr.flat[coord] -= 2 * h
                dn = cost_value(spec, times, labels, cfg, horizon)
                arr.flat[coord] += h
                fd = (up - dn) / (2 * h)
                ad = grads.weight_grads[li].flat[coord]
                assert ad == pytest.approx(fd, rel=1e-4, abs=1e-8)
                checked += 1
        assert checked >= 8

    def test_hidden_time_seed_gradient_matches_fd(self):
        # A direct dC/dt target on hidden firing times (the injection the
        # regularizers use) must backpropagate like any other cost term.
        model = model_for(Variant.NON_LEAKY)
        spec = build_network("10-7-3", (10,), model, seed=2)
        rng = np.random.default_rng(23)
        times = rng.uniform(0.0, 3.0, size=(2, 10))
        horizon = 16.0

        trace = forward_batch(spec, times, horizon)
        hidden = trace.records[0]
        seeds = rng.normal(size=hidden.out_times.shape)
        seeds[~np.isfinite(hidden.out_times)] = 0.0

        def value():
            tr = forward_batch(spec, times, horizon)
            tout = tr.records[0].out_times
            return float(np.sum(seeds[np.isfinite(tout)]
                                * tout[np.isfinite(tout)]))

        grads = network_backward(
            trace, np.zeros_like(trace.output_times), {0: seeds})
        arrays = spec.weight_arrays()
        h = 1e-6
        checked = 0
        for coord in rng.choice(arrays[0].size, size=10, replace=False):
            if not stable_under_weight_probe(spec, times, 0, coord, h,
                                             horizon):
                continue
            arrays[0].flat[coord] += h
            up = value()
            arrays[0].flat[coord] -= 2 * h
            dn = value()
            arrays[0].flat[coord] += h
            fd = (up - dn) / (2 * h)
            assert grads.weight_grads[0].flat[coord] == pytest.approx(
                fd, rel=1e-4, abs=1e-8)
            checked += 1
        assert checked >= 6
        assert np.all(grads.weight_grads[1] == 0.0)

    def test_input_time_gradient_matches_fd(self):
        model = model_for(Variant.CURRENT_SYNAPSE)
        spec = build_network("8-6-3", (8,), model, seed=9)
        rng = np.random.default_rng(41)
        times = rng.uniform(0.0, 3.0, size=(2, 8))
        labels = np.array([0, 2])
        cfg = CostConfig(gamma1=0.02, t_ref=4.0)
        horizon = 2 * cfg.t_ref
        trace = forward_batch(spec, times, horizon)
        report, grads = total_cost(trace, labels, cfg)
        h = 1e-6
        checked = 0
        for b in range(2):
            for j in range(8):
                probe = times.copy()
                probe[b, j] += h
                up_trace = forward_batch(spec, probe, horizon)
                probe[b, j] -= 2 * h
                dn_trace = forward_batch(spec, probe, horizon)
                same = all(
                    np.array_equal(r1.fired, r2.fired)
                    and np.array_equal(r1.fired, r3.fired)
                    for r1, r2, r3 in zip(trace.spiking_records(),
                                          up_trace.spiking_records(),
                                          dn_trace.spiking_records()))
                if not same:
                    continue
                up = total_cost(up_trace, labels, cfg)[0].C
                dn = total_cost(dn_trace, labels, cfg)[0].C
                fd = (up - dn) / (2 * h)
                ad = grads.d_input[b, j]
                assert ad == pytest.approx(fd, rel=1e-4, abs=1e-8)
                checked += 1
        assert checked >= 10


class TestConvDenseEquivalence:
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("padding", [0, 1])
    def test_conv_backward_equals_unrolled_dense(self, variant, padding):
        model = model_for(variant)
        spec = build_network("Conv(3,2)-4", (5, 5, 2), model,
                             padding=padding, seed=13 + variant)
        conv = spec.layers[0]
        rng = np.random.default_rng(29 + variant)
        times = rng.uniform(0.0, 3.0, size=(3, 50))
        times[rng.random((3, 50)) < 0.1] = np.inf
        trace = forward_batch(spec, times, HORIZON)
        rec = trace.records[0]

        upstream = rng.normal(size=rec.out_times.shape)
        upstream[~np.isfinite(rec.out_times)] = 0.0
        dk, dtin = backward_conv_record(rec, conv, model, upstream)

        # The same computation phrased as a dense layer: every patch becomes
        # a sample row, the kernel becomes a (plen -> oc) weight matrix.
        pm = rec.patch_map
        n_pos, plen = pm.shape
        oc = conv.out_channels
        ext = np.concatenate([times, np.full((3, 1), np.inf)], axis=1)
        rows = ext[:, np.where(pm < 0, 50, pm)].reshape(3 * n_pos, plen)
        wft = conv.kernels.transpose(2, 3, 1, 0).reshape(plen, oc)
        dspec = build_network(f"{plen}-{oc}", (plen,), model, seed=0)
        dspec.set_weight_arrays([wft.T])
        dtrace = forward_batch(dspec, rows, HORIZON)
        np.testing.assert_array_equal(
            dtrace.output_times.reshape(3, n_pos * oc), rec.out_times)

        dgrads = network_backward(
            dtrace, upstream.reshape(3 * n_pos, oc))
        dw = dgrads.weight_grads[0]          # (oc, plen)
        k, ic = conv.kernel_size, conv.in_shape[2]
        dk_ref = dw.reshape(oc, k, k, ic).transpose(0, 3, 1, 2)
        np.testing.assert_array_equal(dk, dk_ref)

        dtin_ref = np.zeros((3, 50))
        d_rows = dgrads.d_input.reshape(3, n_pos, plen)
        for p in range(n_pos):
            for j in range(plen):
                if pm[p, j] >= 0:
                    dtin_ref[:, pm[p, j]] += d_rows[:, p, j]
        np.testing.assert_allclose(dtin, dtin_ref, rtol=0, atol=1e-12)
