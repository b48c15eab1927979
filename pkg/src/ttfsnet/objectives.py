"""Cost function: timing loss, temporal penalty, and sparse-firing terms.

The training objective is

    C = L + gamma1 * T + gamma2 * V + gamma3 * Q

where L is a softmax cross-entropy over output spike times (earliest spike
wins, so the label's time is pushed down), T pulls output times toward a
reference time, and V and Q are per-hidden-layer regularizers that trade
accuracy against firing sparsity:

* membrane mode (V): for each fired hidden neuron, the regularizer equals
  the limit of the normalized membrane-potential integral as the comparison
  level approaches the threshold.  Its fixed-variable gradient is exactly
  the negative firing-time derivative, so it backpropagates as an extra
  dC/dt_i = -gamma2 * xi^l seed on hidden spike times (making earlier
  hidden spikes costlier, which silences marginal neurons).
* integral mode: the pre-limit Riemann-sum form of the same integral with
  explicit comparison level v_hat and step dt; gradients differentiate the
  sampled membrane potential with grid, indicator, and range held fixed.
* firing-condition mode (Q): the causal weight sum of every fired hidden
  neuron (the quantity whose magnitude decides whether the threshold is
  reachable); its gradient is 1 on the causal set and it deliberately does
  not propagate to presynaptic times.
* promotion mode: Q instead sums the full weight rows of silent neurons;
  used with gamma3 < 0 to push dead neurons back above threshold.

Per-layer sums are weighted by xi**l with l = 1 at the first hidden
spiking layer (pooling layers do not count).  The output layer is never
regularized.  All reported values and gradients are batch means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernels
from .backprop import NetworkGradients, network_backward
from .layers import ForwardTrace, SpikingRecord
from .neuron import NeuronModelConfig, Variant


@dataclass(frozen=True)
class CostConfig:
    gamma1: float = 0.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    xi: float = 1.0
    tau_soft: float = 0.9
    t_ref: float = 8.0
    window_T: Optional[float] = None     # defaults to t_ref
    v_form: str = "membrane"             # "membrane" or "integral"
    v_hat: float = 0.5
    dt_integral: Optional[float] = None  # defaults to t_ref / 1000
    promotion_mode: bool = False

    def __post_init__(self):
        if self.tau_soft <= 0.0:
            raise ValueError("tau_soft must be positive")
        if self.t_ref <= 0.0:
            raise ValueError("t_ref must be positive")
        if self.window_T is not None and self.window_T <= 0.0:
            raise ValueError("window_T must be positive")
        if self.xi <= 0.0:
            raise ValueError("xi must be positive")
        if self.v_form not in ("membrane", "integral"):
            raise ValueError("v_form must be 'membrane' or 'integral'")
        if self.dt_integral is not None and self.dt_integral <= 0.0:
            raise ValueError("dt_integral must be positive")

    @property
    def window(self) -> float:
        return self.t_ref if self.window_T is None else self.window_T

    @property
    def dt(self) -> float:
        return self.t_ref / 1000.0 if self.dt_integral is None else self.dt_integral

    def validate_for(self, model: NeuronModelConfig) -> None:
        if self.v_form == "integral" and not (0.0 < self.v_hat
                                              < model.v_threshold):
            raise ValueError("v_hat must lie strictly between 0 and the "
                             "firing threshold for the integral form")

    @property
    def surrogate_time(self) -> float:
        """Stand-in output time for neurons that never fire."""
        return 2.0 * self.t_ref


@dataclass
class LossReport:
    L: float
    T_penalty: float
    V: float
    Q: float
    C: float
    v_layers: List[float] = field(default_factory=list)
    q_layers: List[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# output-layer terms (single-sample forms)
# ---------------------------------------------------------------------------

def softmax_ce(output_times, label: int, tau_soft: float
               ) -> Tuple[float, np.ndarray]:
    """Cross entropy on the softmax of negative spike times.

    Scores are -t_i / tau_soft, so early spikes carry the probability
    mass and the value is -ln p(label) >= 0.  Minimizing drives the
    label's spike earlier while pushing its earliest competitors later;
    a competitor that already fires well after the label contributes
    almost nothing, which keeps the pressure bounded.  Returns
    (value, d/d_times) with d/dt_i = (1{i=label} - s_i) / tau_soft.
    """
    t = np.asarray(output_times, dtype=np.float64).reshape(-1)
    if not (0 <= label < t.size):
        raise ValueError(f"label {label} out of range for {t.size} outputs")
    z = -t / tau_soft
    z = z - z.max()
    e = np.exp(z)
    s = e / e.sum()
    value = float(math.log(e.sum()) - z[label])
    grad = -s / tau_soft
    grad[label] += 1.0 / tau_soft
    return value, grad


def temporal_penalty(output_times, t_ref: float) -> Tuple[float, np.ndarray]:
    """Sum of squared deviations from the reference time."""
    t = np.asarray(output_times, dtype=np.float64).reshape(-1)
    d = t - t_ref
    return float(d @ d), 2.0 * d


# ---------------------------------------------------------------------------
# hidden-layer regularizers
# ---------------------------------------------------------------------------

def _hidden_records(trace: ForwardTrace) -> List[Tuple[int, SpikingRecord]]:
    """(xi exponent, record) pairs for hidden spiking layers in order."""
    recs = trace.hidden_spiking_records()
    return [(l + 1, r) for l, r in enumerate(recs)]


def _flat2(a: np.ndarray) -> np.ndarray:
    """Collapse a record field to (samples, neurons) for shared-weight use."""
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


def membrane_values(rec: SpikingRecord, model: NeuronModelConfig,
                    window: float) -> np.ndarray:
    """Per-neuron regularizer values (the v_hat -> V_th limit), zero for
    unfired neurons and those firing at or after the window."""
    tau = model.tau
    vth = model.v_threshold
    fired = rec.fired.reshape(rec.fired.shape[0], -1)
    tout = rec.tout.reshape(fired.shape)
    sumw = rec.sumw.reshape(fired.shape)
    aux1 = rec.aux1.reshape(fired.shape)
    aux2 = rec.aux2.reshape(fired.shape)
    live = fired & (tout < window)
    v = np.zeros(fired.shape)
    if not live.any():
        return v
    t = np.where(live, tout, 0.0)
    if model.variant == Variant.NON_LEAKY:
        with np.errstate(divide="ignore", invalid="ignore"):
            val = t - aux1 / sumw
    elif model.variant == Variant.CURRENT_SYNAPSE:
        denom = sumw - vth / tau
        with np.errstate(divide="ignore", invalid="ignore"):
            val = tau * (sumw - np.exp(-t / tau) * aux1) / denom
    else:
        u = np.exp(-t / (2.0 * tau))
        sd = 2.0 * aux1 * u - aux2
        denom = u * sd
        with np.errstate(divide="ignore", invalid="ignore"):
            val = vth / denom
        val = np.where(denom > 0.0, val, 0.0)
    v[live] = val[live]
    return v


def m_ssr(trace: ForwardTrace, model: NeuronModelConfig, cfg: CostConfig
          ) -> Tuple[List[float], Dict[int, np.ndarray]]:
    """Membrane-mode regularizer: per-hidden-layer batch-mean values and
    the dV/dt_i seed masks (before the gamma2 factor).

    The fixed-variable gradient of each value is -dt_i/dx for every causal
    weight and presynaptic time, so the whole term backpropagates as a
    seed of xi^l on dC/dt_i of live hidden neurons, negated downstream.
    """
    n_batch = trace.batch_size
    values: List[float] = []
    seeds: Dict[int, np.ndarray] = {}
    for l, rec in _hidden_records(trace):
        v = membrane_values(rec, model, cfg.window)
        values.append(float(v.sum()) / n_batch)
        fired = rec.fired.reshape(n_batch, -1)
        tout = rec.tout.reshape(n_batch, -1)
        live = fired & (tout < cfg.window)
        seeds[rec.index] = (cfg.xi ** l) * live.astype(np.float64)
    return values, seeds


def f_ssr(trace: ForwardTrace, cfg: CostConfig
          ) -> Tuple[List[float], Dict[int, np.ndarray]]:
    """Firing-condition regularizer: causal weight sums of live hidden
    neurons.  Returns per-layer batch-mean values and raw weight-gradient
    arrays (public layout, unscaled: 1 per causal weight, xi applied).

    No gradient reaches presynaptic times by construction.
    """
    n_batch = trace.batch_size
    values: List[float] = []
    grads: Dict[int, np.ndarray] = {}
    for l, rec in _hidden_records(trace):
        dwt = np.zeros_like(rec.wt)
        raw = kernels.fssr_accumulate(
            rec.wt, _flat2(rec.ts), _flat2(rec.order).astype(np.int64),
            rec.npres.reshape(-1), _flat2(rec.fired), _flat2(rec.tout),
            cfg.window, cfg.xi ** l, dwt)
        values.append(raw / n_batch)
        grads[rec.index] = _weight_grad_public(rec, trace, dwt)
    return values, grads


def firing_promotion(trace: ForwardTrace, cfg: CostConfig
                     ) -> Tuple[List[float], Dict[int, np.ndarray]]:
    """Promotion-mode Q: full weight-row sums of silent hidden neurons.

    Used with gamma3 < 0 so the update pushes those rows upward until the
    firing condition is met again.
    """
    n_batch = trace.batch_size
    values: List[float] = []
    grads: Dict[int, np.ndarray] = {}
    for l, rec in _hidden_records(trace):
        dwt = np.zeros_like(rec.wt)
        raw = kernels.promotion_accumulate(rec.wt, _flat2(rec.fired),
                                           cfg.xi ** l, dwt)
        values.append(raw / n_batch)
        grads[rec.index] = _weight_grad_public(rec, trace, dwt)
    return values, grads


def _weight_grad_public(rec: SpikingRecord, trace: ForwardTrace,
                        dwt: np.ndarray) -> np.ndarray:
    """Transform an input-major gradient into the public weight layout."""
    if rec.kind == "dense":
        return np.ascontiguousarray(dwt.T)
    layer = trace.spec.layers[rec.index]
    k = layer.kernel_size
    ic = layer.in_shape[2]
    oc = dwt.shape[1]
    return np.ascontiguousarray(
        dwt.T.reshape(oc, k, k, ic).transpose(0, 3, 1, 2))


def integral_membrane_loss(trace: ForwardTrace, model: NeuronModelConfig,
                           cfg: CostConfig, grad_scale: float = 0.0
                           ) -> Tuple[List[float], Dict[int, np.ndarray],
                                      Dict[int, np.ndarray]]:
    """Pre-limit membrane regularizer on dense hidden layers.

    Riemann sum of (v(t) - v_hat) / (V_th - v_hat) over grid points where
    v exceeds v_hat, from 0 to min(firing time, window); unfired neurons
    integrate over the whole window.  Gradients (scaled by ``grad_scale``;
    pass 0 to skip them) differentiate the sampled potential only: the
    grid, the indicator, and the integration range stay fixed.

    Returns (per-layer batch-mean values, weight grads keyed by layer
    index, input-time grads keyed by layer index).
    """
    cfg.validate_for(model)
    n_batch = trace.batch_size
    values: List[float] = []
    wgrads: Dict[int, np.ndarray] = {}
    tgrads: Dict[int, np.ndarray] = {}
    for l, rec in _hidden_records(trace):
        if rec.kind != "dense":
            raise ValueError("integral membrane loss supports dense hidden "
                             "layers only")
        n_out = rec.wt.shape[1]
        dwt = np.zeros_like(rec.wt)
        dtin = np.zeros((n_batch, rec.wt.shape[0]))
        vals = np.empty((n_batch, n_out))
        pf = grad_scale * (cfg.xi ** l)
        kernels.integral_layer(int(model.variant), rec.wt, rec.ts,
                               rec.order, rec.npres, rec.fired, rec.tout,
                               cfg.window, cfg.v_hat, model.v_threshold,
                               model.tau, cfg.dt, pf, dwt, dtin, vals)
        values.append(float(vals.sum()) / n_batch)
        if grad_scale != 0.0:
            wgrads[rec.index] = _weight_grad_public(rec, trace, dwt)
            tgrads[rec.index] = dtin
    return values, wgrads, tgrads


# ---------------------------------------------------------------------------
# total cost
# ---------------------------------------------------------------------------

def total_cost(trace: ForwardTrace, labels, cfg: CostConfig,
               want_gradients: bool = True
               ) -> Tuple[LossReport, Optional[NetworkGradients]]:
    """Evaluate the full cost on a batched trace and backpropagate it.

    ``labels`` is an integer array (B,).  Unfired outputs enter L and T
    at the surrogate time with zero timing gradient.  Returns the batch
    -mean LossReport and, when requested, gradients aligned with
    ``trace.spec.weight_arrays()``.
    """
    spec = trace.spec
    model = spec.model
    cfg.validate_for(model)
    n_batch = trace.batch_size
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n_batch:
        raise ValueError("label count does not match the batch")
    out = trace.output_times
    n_out = out.shape[1]
    if labels.min() < 0 or labels.max() >= n_out:
        raise ValueError("label out of range")
    fired_out = np.isfinite(out)
    t_eff = np.where(fired_out, out, cfg.surrogate_time)

    # softmax over -t/tau_soft (early spikes get the mass), max-subtracted
    z = -t_eff / cfg.tau_soft
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1)
    s = e / denom[:, None]
    rows = np.arange(n_batch)
    loss_l = float(np.mean(np.log(denom) - z[rows, labels]))

    d = t_eff - cfg.t_ref
    loss_t = float(np.mean(np.sum(d * d, axis=1)))

    d_out = None
    if want_gradients:
        d_out = -s / cfg.tau_soft
        d_out[rows, labels] += 1.0 / cfg.tau_soft
        d_out += cfg.gamma1 * 2.0 * d
        d_out *= fired_out
        d_out /= n_batch

    hidden_seeds: Dict[int, np.ndarray] = {}
    direct: Dict[int, np.ndarray] = {}

    def add_direct(idx: int, g: np.ndarray) -> None:
        if idx in direct:
            direct[idx] += g
        else:
            direct[idx] = g

    # V term
    v_layers: List[float] = []
    if cfg.gamma2 != 0.0:
        if cfg.v_form == "membrane":
            v_layers, masks = m_ssr(trace, model, cfg)
            if want_gradients:
                for idx, mask in masks.items():
                    hidden_seeds[idx] = (-cfg.gamma2 / n_batch) * mask
        else:
            v_layers, wgrads, tgrads = integral_membrane_loss(
                trace, model, cfg,
                grad_scale=(cfg.gamma2 / n_batch if want_gradients else 0.0))
            if want_gradients:
                for idx, g in wgrads.items():
                    add_direct(idx, g)
                for idx, g in tgrads.items():
                    # time gradients attach to whatever feeds this layer
                    if idx == 0:
                        hidden_seeds[-1] = hidden_seeds.get(-1, 0.0) + g
                    else:
                        prev = trace.records[idx - 1].index
                        hidden_seeds[prev] = hidden_seeds.get(prev, 0.0) + g
    loss_v = float(sum((cfg.xi ** (l + 1)) * v for l, v in enumerate(v_layers)))

    # Q term
    q_layers: List[float] = []
    if cfg.gamma3 != 0.0:
        if cfg.promotion_mode:
            q_layers, qgrads = firing_promotion(trace, cfg)
        else:
            q_layers, qgrads = f_ssr(trace, cfg)
        if want_gradients:
            for idx, g in qgrads.items():
                add_direct(idx, (cfg.gamma3 / n_batch) * g)
    loss_q = float(sum((cfg.xi ** (l + 1)) * q for l, q in enumerate(q_layers)))

    cost = loss_l + cfg.gamma1 * loss_t + cfg.gamma2 * loss_v \
        + cfg.gamma3 * loss_q
    report = LossReport(L=loss_l, T_penalty=loss_t, V=loss_v, Q=loss_q,
                        C=cost, v_layers=v_layers, q_layers=q_layers)
    if not want_gradients:
        return report, None

    input_seed = hidden_seeds.pop(-1, None)
    grads = network_backward(trace, d_out, hidden_seeds or None)
    if input_seed is not None:
        grads.d_input += input_seed
    for pos, idx in enumerate(spec.spiking_indices()):
        if idx in direct:
            grads.weight_grads[pos] += direct[idx]
    return report, grads
