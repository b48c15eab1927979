"""Experiment drivers: gradient convergence tables, sweeps, rasters.

These produce plain row lists that the CLI serializes to CSV; they are
equally usable from tests and notebooks.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backprop import network_backward
from .config import RunConfig
from .data import Dataset
from .layers import NetworkSpec, build_network, forward_batch
from .objectives import CostConfig, integral_membrane_loss, m_ssr
from .training import TrainConfig, evaluate, train

__all__ = [
    "GradErrorRow",
    "gradient_error",
    "SweepRow",
    "run_sweep",
    "raster_rows",
]

# Weight gradients smaller than this are excluded from relative-error
# statistics (the ratio would be dominated by floating-point noise).
TINY_GRAD = 1e-300


# ---------------------------------------------------------------------------
# gradient convergence: integral form vs its v_hat -> V_th limit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradErrorRow:
    v_hat: float
    n_steps: int
    layer: int          # 1-based hidden layer position; 0 = all layers pooled
    error: float        # mean over weights of |g_int - g_lim| / |g_int|
    excluded: int       # weights skipped because |g_int| < TINY_GRAD


def _weight_grad_map(trace, d_out, seeds) -> Dict[int, np.ndarray]:
    grads = network_backward(trace, d_out, seeds)
    idxs = trace.spec.spiking_indices()
    return dict(zip(idxs, grads.weight_grads))


def gradient_error(spec: NetworkSpec, times: np.ndarray, cost: CostConfig,
                   v_hats: Sequence[float], n_steps_list: Sequence[int],
                   horizon: Optional[float] = None) -> List[GradErrorRow]:
    """Relative error between integral-form and limit-form weight gradients.

    For every sample, both forms are evaluated with the membrane term alone
    (coefficient 1): the limit form seeds -xi^l onto hidden spike times,
    the integral form uses step ``t_ref / n_steps`` and comparison level
    ``v_hat``.  Per-weight relative errors are averaged over weights whose
    integral gradient is representable, then over samples.  Layer 0 rows
    pool every hidden layer's weights.
    """
    if horizon is None:
        horizon = 2.0 * cost.t_ref
    model = spec.model
    n = times.shape[0]
    combos = [(vh, int(ns)) for vh in v_hats for ns in n_steps_list]
    err_sums: Dict[Tuple[float, int], np.ndarray] = {}
    excl: Dict[Tuple[float, int], int] = {c: 0 for c in combos}
    n_hidden = len(spec.hidden_spiking_indices())
    for c in combos:
        err_sums[c] = np.zeros(n_hidden + 1)

    for b in range(n):
        trace = forward_batch(spec, times[b: b + 1], horizon)
        d_out = np.zeros_like(trace.output_times)
        _, masks = m_ssr(trace, model, cost)
        lim_seeds = {idx: -mask for idx, mask in masks.items()}
        g_lim = _weight_grad_map(trace, d_out, lim_seeds)
        hidden_idx = spec.hidden_spiking_indices()

        for vh, ns in combos:
            icfg = dataclasses.replace(cost, gamma2=1.0, v_form="integral",
                                       v_hat=vh,
                                       dt_integral=cost.t_ref / ns)
            _, wgrads, tgrads = integral_membrane_loss(
                trace, model, icfg, grad_scale=1.0)
            seeds: Dict[int, np.ndarray] = {}
            for idx, g in tgrads.items():
                if idx == 0:
                    continue    # gradient on network inputs, no weights there
                prev = trace.records[idx - 1].index
                seeds[prev] = seeds.get(prev, 0.0) + g
            g_int = _weight_grad_map(trace, d_out, seeds)
            for idx, g in wgrads.items():
                g_int[idx] = g_int[idx] + g

            pooled_err = 0.0
            pooled_cnt = 0
            for k, idx in enumerate(hidden_idx):
                gi = g_int[idx].ravel()
                gl = g_lim[idx].ravel()
                ok = np.abs(gi) >= TINY_GRAD
                excl[(vh, ns)] += int(gi.size - ok.sum())
                if ok.any():
                    rel = np.abs(gi[ok] - gl[ok]) / np.abs(gi[ok])
                    err_sums[(vh, ns)][k + 1] += rel.mean()
                    pooled_err += rel.sum()
                    pooled_cnt += int(ok.sum())
            if pooled_cnt:
                err_sums[(vh, ns)][0] += pooled_err / pooled_cnt

    rows = []
    for vh, ns in combos:
        for layer in range(n_hidden + 1):
            rows.append(GradErrorRow(v_hat=vh, n_steps=ns, layer=layer,
                                     error=float(err_sums[(vh, ns)][layer] / n),
                                     excluded=excl[(vh, ns)]))
    return rows


# ---------------------------------------------------------------------------
# sparsity/accuracy sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    seed: int
    layer: str          # "1", "2", ... or "mean"
    sparsity: float
    accuracy: float
    train_cost: float


_POOL_DATA: dict = {}


def _apply_sweep_value(cfg: RunConfig, value: float
                       ) -> Tuple[CostConfig, float]:
    """Returns (cost config, eta) with the swept parameter replaced."""
    param = cfg.sweep_parameter
    if param == "eta":
        return cfg.cost, value
    return dataclasses.replace(cfg.cost, **{param: value}), cfg.eta


def _sweep_job(args) -> List[SweepRow]:
    cfg, value, seed = args
    train_ds: Dataset = _POOL_DATA["train"]
    test_ds: Dataset = _POOL_DATA["test"]
    cost, eta = _apply_sweep_value(cfg, value)
    model = cfg.model()
    spec = build_network(cfg.architecture, train_ds.input_shape, model,
                         padding=cfg.padding, seed=seed)
    tcfg = TrainConfig(cost=cost, eta=eta, batch_size=cfg.batch_size,
                       epochs=cfg.epochs, seed=seed, shuffle=cfg.shuffle,
                       horizon=cfg.horizon)
    rows_m = train(spec, train_ds.times, train_ds.labels, tcfg,
                   test_ds.times, test_ds.labels)
    last = rows_m[-1]
    out = [SweepRow(cfg.sweep_parameter, value, seed, str(k + 1),
                    float(s), last.test_accuracy, last.train_cost)
           for k, s in enumerate(last.layer_sparsity)]
    out.append(SweepRow(cfg.sweep_parameter, value, seed, "mean",
                        last.mean_sparsity, last.test_accuracy,
                        last.train_cost))
    return out


def run_sweep(cfg: RunConfig, train_ds: Dataset, test_ds: Dataset,
              workers: int = 1) -> List[SweepRow]:
    """Train once per (sweep value, seed) and report final-epoch metrics.

    Each job reinitializes the network from its seed, so rows are
    independent and reproducible. Returns per-layer and mean rows for
    every job, in sweep order.
    """
    if not cfg.sweep_parameter or not cfg.sweep_values:
        raise ValueError("run config has no sweep parameter/values")
    jobs = [(cfg, v, s) for v in cfg.sweep_values
            for s in range(cfg.sweep_seeds)]
    _POOL_DATA["train"] = train_ds
    _POOL_DATA["test"] = test_ds
    try:
        if workers <= 1:
            results = [_sweep_job(j) for j in jobs]
        else:
            # fork start method shares the datasets copy-on-write
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_job, jobs))
    finally:
        _POOL_DATA.clear()
    return [row for rows in results for row in rows]


# ---------------------------------------------------------------------------
# spike rasters
# ---------------------------------------------------------------------------

def raster_rows(spec: NetworkSpec, times: np.ndarray,
                horizon: float) -> List[Tuple[int, int, int, float]]:
    """(sample, layer, neuron, firing time) for every spike in a batch.

    Layer 0 is the encoded input; layers 1..R follow the network's record
    order (pooling layers included, since they forward spikes). At most
    one row per neuron per sample; silent neurons are omitted.
    """
    trace = forward_batch(spec, times, horizon)
    rows: List[Tuple[int, int, int, float]] = []
    n = times.shape[0]
    for b in range(n):
        row_t = times[b].ravel()
        for j in np.flatnonzero(np.isfinite(row_t)):
            rows.append((b, 0, int(j), float(row_t[j])))
        for r, rec in enumerate(trace.records):
            out_t = rec.out_times[b].ravel()
            for j in np.flatnonzero(np.isfinite(out_t)):
                rows.append((b, r + 1, int(j), float(out_t[j])))
    return rows
