"""Minibatch training with Adam, plus accuracy and sparsity evaluation.

The training loop is deterministic for a fixed seed: minibatch order comes
from a private ``numpy.random.default_rng`` and every gradient is an exact
closed-form quantity, so two runs with the same config produce bitwise
identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .layers import ForwardTrace, NetworkSpec, forward_batch
from .objectives import CostConfig, total_cost

__all__ = [
    "AdamState",
    "adam_step",
    "TrainConfig",
    "MetricsRow",
    "train",
    "evaluate",
    "predict",
    "sparsity_from_trace",
]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment buffers for a list of parameter arrays."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], eta: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   step=0, eta=eta, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("parameter/gradient count does not match AdamState")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.eta * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# configuration and metrics
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    cost: CostConfig = field(default_factory=CostConfig)
    eta: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True
    #: Event-sweep horizon; spikes later than this never fire. ``None``
    #: means twice the reference time, which leaves room for outputs that
    #: trail the encoding window.
    horizon: Optional[float] = None

    @property
    def sweep_horizon(self) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        return 2.0 * self.cost.t_ref


@dataclass
class MetricsRow:
    epoch: int
    train_cost: float
    test_accuracy: float
    layer_sparsity: Tuple[float, ...]
    mean_sparsity: float


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict(trace: ForwardTrace, t_ref: float) -> np.ndarray:
    """Predicted class per sample: earliest output spike wins.

    Output neurons that never fire are scored at the surrogate time
    ``2 * t_ref``; ties go to the lowest class index, so a sample whose
    outputs are all silent lands on class 0.
    """
    times = trace.output_times.copy()
    times[~np.isfinite(times)] = 2.0 * t_ref
    return np.argmin(times, axis=1)


def sparsity_from_trace(trace: ForwardTrace, t_ref: float) -> Tuple[float, ...]:
    """Fraction of hidden neurons that fire before ``t_ref``, per layer.

    Pooling layers route existing spikes rather than emitting their own,
    so they are excluded, as is the output layer.
    """
    out = []
    for rec in trace.hidden_spiking_records():
        fired = rec.fired.reshape(rec.out_times.shape)
        live = fired & (rec.out_times < t_ref)
        out.append(float(np.count_nonzero(live)) / live.size)
    return tuple(out)


def evaluate(spec: NetworkSpec, times: np.ndarray, labels: np.ndarray,
             config: TrainConfig, batch_size: int = 512,
             ) -> Tuple[float, Tuple[float, ...], float]:
    """Accuracy and per-layer hidden sparsity over a dataset.

    Returns ``(accuracy, layer_sparsity, mean_sparsity)``.
    """
    n = times.shape[0]
    correct = 0
    fired_counts: Optional[np.ndarray] = None
    sizes: Optional[np.ndarray] = None
    t_ref = config.cost.t_ref
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        trace = forward_batch(spec, times[lo:hi], config.sweep_horizon)
        pred = predict(trace, t_ref)
        correct += int(np.count_nonzero(pred == labels[lo:hi]))
        recs = trace.hidden_spiking_records()
        if fired_counts is None:
            fired_counts = np.zeros(len(recs), dtype=np.int64)
            sizes = np.zeros(len(recs), dtype=np.int64)
        for k, rec in enumerate(recs):
            fired = rec.fired.reshape(rec.out_times.shape)
            live = fired & (rec.out_times < t_ref)
            fired_counts[k] += np.count_nonzero(live)
            sizes[k] += live.size
    accuracy = correct / n if n else 0.0
    if fired_counts is None or fired_counts.size == 0:
        return accuracy, (), 0.0
    per_layer = tuple(float(f) / s for f, s in zip(fired_counts, sizes))
    return accuracy, per_layer, float(np.mean(per_layer))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train(spec: NetworkSpec, train_times: np.ndarray, train_labels: np.ndarray,
          config: TrainConfig,
          eval_times: Optional[np.ndarray] = None,
          eval_labels: Optional[np.ndarray] = None,
          callback: Optional[Callable[[MetricsRow], bool]] = None,
          ) -> List[MetricsRow]:
    """Train ``spec`` in place; returns one :class:`MetricsRow` per epoch.

    ``callback`` sees each finished epoch's row; returning a truthy value
    stops training early (the row is still recorded). When no eval split is
    given, accuracy and sparsity are measured on the first 2048 training
    samples so the metrics stay cheap.
    """
    config.cost.validate_for(spec.model)
    rng = np.random.default_rng(config.seed)
    params = spec.weight_arrays()
    state = AdamState.for_params(params, eta=config.eta)
    n = train_times.shape[0]
    if eval_times is None:
        eval_times = train_times[: min(n, 2048)]
        eval_labels = train_labels[: min(n, 2048)]

    rows: List[MetricsRow] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        cost_sum = 0.0
        seen = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo: lo + config.batch_size]
            trace = forward_batch(spec, train_times[idx], config.sweep_horizon)
            report, grads = total_cost(trace, train_labels[idx], config.cost)
            adam_step(state, params, grads.weight_grads)
            cost_sum += report.C * idx.size
            seen += idx.size
        accuracy, per_layer, mean_sp = evaluate(
            spec, eval_times, eval_labels, config)
        row = MetricsRow(epoch=epoch, train_cost=cost_sum / max(seen, 1),
                         test_accuracy=accuracy, layer_sparsity=per_layer,
                         mean_sparsity=mean_sp)
        rows.append(row)
        if callback is not None and callback(row):
            break
    return rows
