"""Exact backpropagation through spike times.

Because firing times are exact roots of the membrane equation, their
derivatives follow from the implicit function theorem: for a neuron firing
at t_i with causal set Gamma,

    dt_i/dx = -(dv/dx) / (dv/dt)   evaluated at t = t_i,

where x is any weight w_j or presynaptic time t_j with j in Gamma.  The
crossing slope dv/dt comes from the cached causal sums of the forward pass,
so no membrane re-evaluation is needed.  Non-causal inputs (arriving after
t_i, or absent) have exactly zero derivative.  A vanishing crossing slope
(grazing the threshold) would blow these ratios up; such neurons contribute
zero gradient instead, which matches the subgradient of the left limit.

Gradients flow backward layer by layer through :func:`network_backward`;
min-pooling routes each output's gradient to the window's earliest input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernels
from .layers import (ConvLayerParams, DenseLayerParams, ForwardTrace,
                     PoolRecord, SpikingRecord, _conv_record, _dense_record)
from .neuron import FiringSolution, NeuronModelConfig, SpikeVector, Variant


def crossing_slope(model: NeuronModelConfig, sol: FiringSolution) -> float:
    """dv/dt at the firing time, from the solution's cached sums."""
    if not sol.fired:
        raise ValueError("no crossing slope for an unfired neuron")
    if model.variant == Variant.NON_LEAKY:
        return sol.sum_w
    if model.variant == Variant.CURRENT_SYNAPSE:
        return sol.sum_w - model.v_threshold / model.tau
    u = math.exp(-sol.time / (2.0 * model.tau))
    return u * (2.0 * sol.a * u - sol.b)


def firing_time_partials(model: NeuronModelConfig, weights,
                         inputs: SpikeVector, sol: FiringSolution
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of one neuron's firing time.

    Returns (dt/dw, dt/dt_in), each shaped like the flat input.  Entries
    outside the causal set are exactly zero, as is everything when the
    neuron did not fire or only grazes the threshold.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    times = inputs.flat().times
    dt_dw = np.zeros_like(w)
    dt_dt = np.zeros_like(w)
    if not sol.fired:
        return dt_dw, dt_dt
    vd = crossing_slope(model, sol)
    if vd <= 0.0:
        return dt_dw, dt_dt
    g = sol.causal_set
    delta = sol.time - times[g]
    if model.variant == Variant.NON_LEAKY:
        kappa = delta
        kprime = np.ones_like(delta)
    elif model.variant == Variant.CURRENT_SYNAPSE:
        e = np.exp(-delta / model.tau)
        kappa = model.tau * (1.0 - e)
        kprime = e
    else:
        eh = np.exp(-delta / (2.0 * model.tau))
        e = eh * eh
        kappa = 2.0 * model.tau * (eh - e)
        kprime = 2.0 * e - eh
    dt_dw[g] = -kappa / vd
    dt_dt[g] = w[g] * kprime / vd
    return dt_dw, dt_dt


# ---------------------------------------------------------------------------
# record-level layer backward (batched; used by network_backward)
# ---------------------------------------------------------------------------

def backward_dense_record(rec: SpikingRecord, model: NeuronModelConfig,
                          upstream: np.ndarray
                          ) -> Tuple[np.ndarray, np.ndarray]:
    """Batched dense backward.  upstream is (B, n_out) dC/dt_out.

    Returns (dW (n_out, n_in) summed over the batch, dTin (B, n_in)).
    """
    b = rec.ts.shape[0]
    n_in, n_out = rec.wt.shape
    up = np.ascontiguousarray(upstream, dtype=np.float64).reshape(b, n_out)
    dwt = np.zeros((n_in, n_out))
    dtin = np.zeros((b, n_in))
    kernels.dense_backward(int(model.variant), rec.wt, rec.ts, rec.order,
                           rec.npres, rec.fired, rec.tout, rec.sumw,
                           rec.aux1, rec.aux2, up, model.v_threshold,
                           model.tau, dwt, dtin)
    return np.ascontiguousarray(dwt.T), dtin


def backward_conv_record(rec: SpikingRecord, layer: ConvLayerParams,
                         model: NeuronModelConfig, upstream: np.ndarray
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """Batched conv backward.  upstream is (B, n_pos * oc) dC/dt_out.

    Returns (dK (oc, ic, k, k) summed over the batch, dTin (B, n_in_flat)).
    """
    b = rec.ts.shape[0]
    n_pos, plen = rec.patch_map.shape
    oc = rec.wt.shape[1]
    up = np.ascontiguousarray(upstream, dtype=np.float64
                              ).reshape(b, n_pos, oc)
    dwft = np.zeros((plen, oc))
    dtflat = np.zeros((b, rec.n_in_flat))
    dtp = np.zeros(plen)
    kernels.conv_backward(int(model.variant), rec.wt, rec.ts, rec.order,
                          rec.npres, rec.patch_map, rec.fired, rec.tout,
                          rec.sumw, rec.aux1, rec.aux2, up,
                          model.v_threshold, model.tau, dwft, dtflat, dtp)
    k = layer.kernel_size
    ic = layer.in_shape[2]
    dk = dwft.T.reshape(oc, k, k, ic).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dk), dtflat


def backward_pool_record(rec: PoolRecord, upstream: np.ndarray) -> np.ndarray:
    """Route pooled-output gradients back to each window's winner."""
    b = rec.route.shape[0]
    up = np.asarray(upstream, dtype=np.float64).reshape(b, -1)
    dtin = np.zeros((b, rec.in_size))
    rows = np.repeat(np.arange(b), up.shape[1])
    np.add.at(dtin, (rows, rec.route.reshape(-1)), up.reshape(-1))
    return dtin


# ---------------------------------------------------------------------------
# whole-network backward
# ---------------------------------------------------------------------------

@dataclass
class NetworkGradients:
    """Weight gradients aligned with ``spec.weight_arrays()`` plus the
    gradient reaching the network input times."""

    weight_grads: List[np.ndarray]
    d_input: np.ndarray


def network_backward(trace: ForwardTrace, d_output: np.ndarray,
                     hidden_time_seeds: Optional[Dict[int, np.ndarray]] = None
                     ) -> NetworkGradients:
    """Backpropagate dC/dt from the output layer to every weight.

    ``d_output`` is (B, n_out).  ``hidden_time_seeds`` optionally adds a
    direct dC/dt term at the outputs of interior spiking layers (keyed by
    layer index, shaped (B, n_flat)); regularizers that differentiate
    hidden firing times inject themselves this way.
    """
    spec = trace.spec
    model = spec.model
    seeds = hidden_time_seeds or {}
    by_layer: Dict[int, np.ndarray] = {}
    cur = np.ascontiguousarray(d_output, dtype=np.float64)
    for rec in reversed(trace.records):
        seed = seeds.get(rec.index)
        if seed is not None:
            cur = cur + seed.reshape(cur.shape)
        if isinstance(rec, PoolRecord):
            cur = backward_pool_record(rec, cur)
            continue
        layer = spec.layers[rec.index]
        if rec.kind == "dense":
            dw, cur = backward_dense_record(rec, model, cur)
        else:
            dw, cur = backward_conv_record(rec, layer, model, cur)
        by_layer[rec.index] = dw
    grads = [by_layer[i] for i in spec.spiking_indices()]
    return NetworkGradients(grads, cur)


# ---------------------------------------------------------------------------
# self-contained single-sample wrappers
# ---------------------------------------------------------------------------

def backward_dense(params: DenseLayerParams, model: NeuronModelConfig,
                   inputs: SpikeVector, upstream: np.ndarray,
                   horizon: float) -> Tuple[np.ndarray, np.ndarray]:
    """Forward + backward of one dense layer on one sample.

    upstream is (n_out,) dC/dt_out; returns (dW (n_out, n_in), dC/dt_in).
    """
    flat = inputs.flat().times[None, :]
    flat = np.where(flat <= horizon, flat, math.inf)
    rec = _dense_record(0, params, model, flat, horizon)
    dw, dtin = backward_dense_record(rec, model,
                                     np.asarray(upstream)[None, :])
    return dw, dtin[0]


def backward_conv(params: ConvLayerParams, model: NeuronModelConfig,
                  inputs: SpikeVector, upstream: np.ndarray,
                  horizon: float) -> Tuple[np.ndarray, np.ndarray]:
    """Forward + backward of one conv layer on one sample.

    upstream is dC/dt_out shaped like the (H', W', C') output (or its
    flattening); returns (dK (oc, ic, k, k), dC/dt_in shaped (H, W, C)).
    """
    flat = inputs.times.reshape(1, -1)
    flat = np.where(flat <= horizon, flat, math.inf)
    rec = _conv_record(0, params, model, flat, horizon)
    dk, dtin = backward_conv_record(rec, params, model,
                                    np.asarray(upstream).reshape(1, -1))
    return dk, dtin[0].reshape(params.in_shape)


def backward_pool(route: np.ndarray, upstream: np.ndarray,
                  in_shape: Tuple[int, int, int]) -> np.ndarray:
    """Route pooled gradients for one sample given the forward routing."""
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    dtin = np.zeros(int(np.prod(in_shape)))
    np.add.at(dtin, route.reshape(-1), up)
    return dtin.reshape(in_shape)
