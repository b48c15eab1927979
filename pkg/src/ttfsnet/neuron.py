r"""Single-neuron kernels for time-to-first-spike networks.

Neurons integrate weighted input spikes and fire once, at the first time the
membrane potential reaches threshold.  Three integrate-and-fire variants are
supported, distinguished by their membrane/synapse time constants
``(tau_v, tau_I)``:

* ``NON_LEAKY``        -- (inf, inf): piecewise-linear potential,
* ``CURRENT_SYNAPSE``  -- (inf, tau): exponentially decaying input current,
* ``ALPHA_SYNAPSE``    -- (2*tau, tau): alpha-shaped response kernel.

All three admit closed-form firing times over a fixed causal input set, which
is what :func:`solve_firing_time` exploits: it sweeps input spikes in time
order and accepts the first candidate crossing that falls before the next
arrival.  :func:`ode_oracle_simulate` provides an independent time-stepped
reference for the same dynamics.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels


class Variant(enum.IntEnum):
    """Neuron model variant, encoded to match the compiled kernels."""

    NON_LEAKY = 0
    CURRENT_SYNAPSE = 1
    ALPHA_SYNAPSE = 2

    @classmethod
    def from_string(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("_", "-")
        table = {
            "non-leaky": cls.NON_LEAKY,
            "nonleaky": cls.NON_LEAKY,
            "current-synapse": cls.CURRENT_SYNAPSE,
            "alpha-synapse": cls.ALPHA_SYNAPSE,
        }
        if key not in table:
            raise ValueError(f"unknown neuron variant: {name!r}")
        return table[key]

    @property
    def label(self) -> str:
        return {0: "non-leaky", 1: "current-synapse", 2: "alpha-synapse"}[int(self)]


@dataclass(frozen=True)
class NeuronModelConfig:
    """Variant plus the shared synaptic time constant and threshold.

    ``tau`` is ignored by the non-leaky variant (its response carries no
    time scale); it must be positive for the leaky ones.
    """

    variant: Variant
    tau: float = 1.0
    v_threshold: float = 1.0

    def __post_init__(self):
        if self.v_threshold <= 0.0:
            raise ValueError("v_threshold must be positive")
        if self.variant != Variant.NON_LEAKY and self.tau <= 0.0:
            raise ValueError("tau must be positive for leaky variants")

    @property
    def tau_v(self) -> float:
        if self.variant == Variant.ALPHA_SYNAPSE:
            return 2.0 * self.tau
        return math.inf

    @property
    def tau_i(self) -> float:
        if self.variant == Variant.NON_LEAKY:
            return math.inf
        return self.tau


class SpikeVector:
    """Spike times of a group of neurons; ``math.inf`` encodes "never fired".

    The array may be any shape (dense layers use 1-D, convolutional layers
    (H, W, C)).  Present times must be finite and non-negative; the +inf
    sentinel never participates in arithmetic, it only marks absence.
    """

    __slots__ = ("times",)

    def __init__(self, times: np.ndarray):
        arr = np.asarray(times, dtype=np.float64)
        if np.isnan(arr).any():
            raise ValueError("spike times may not be NaN")
        finite = np.isfinite(arr)
        if (arr[finite] < 0.0).any():
            raise ValueError("spike times must be non-negative")
        if np.isneginf(arr).any():
            raise ValueError("-inf is not a valid spike time")
        self.times = arr

    @classmethod
    def of(cls, values: Sequence[Union[float, None]]) -> "SpikeVector":
        """Build from a sequence where ``None`` marks an absent spike."""
        return cls(np.array([math.inf if v is None else float(v) for v in values]))

    @classmethod
    def absent(cls, shape) -> "SpikeVector":
        return cls(np.full(shape, math.inf))

    @property
    def shape(self):
        return self.times.shape

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.times)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    def flat(self) -> "SpikeVector":
        return SpikeVector(self.times.reshape(-1))

    def time_at(self, index: int) -> Optional[float]:
        t = self.times.reshape(-1)[index]
        return None if math.isinf(t) else float(t)

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return f"SpikeVector({self.times!r})"


@dataclass
class FiringSolution:
    """Outcome of solving one neuron's firing time.

    ``causal_set`` holds the input indices whose spikes arrived at or before
    the firing time (in arrival order); for an unfired neuron it lists every
    input that arrived before the horizon.  The cached sums are those needed
    to differentiate the firing time later: ``sum_w`` is the causal weight
    sum for every variant, ``sum_wt`` (sum of w*t) is kept for the non-leaky
    variant, ``a``/``b`` are sum(w*exp(t/tau)) and sum(w*exp(t/(2 tau))) for
    the leaky ones, and ``alpha`` is the alpha-variant's crossing-slope
    reciprocal 1/(u*sqrt(disc)).
    """

    fired: bool
    time: Optional[float]
    causal_set: np.ndarray
    sum_w: float
    sum_wt: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    alpha: Optional[float] = None


@dataclass(frozen=True)
class MembraneTrace:
    """Uniformly sampled membrane potential from the reference simulator."""

    sample_times: np.ndarray
    values: np.ndarray
    dt: float


def _check_pair(weights, inputs):
    w = np.ascontiguousarray(np.asarray(weights, dtype=np.float64).reshape(-1))
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    if not isinstance(inputs, SpikeVector):
        inputs = SpikeVector(np.asarray(inputs, dtype=np.float64))
    t = inputs.times.reshape(-1)
    if w.size != t.size:
        raise ValueError(
            f"weight/input length mismatch: {w.size} weights vs {t.size} inputs")
    return w, t


def membrane_potential_at(model: NeuronModelConfig, weights, inputs: SpikeVector,
                          t: float) -> float:
    r"""Membrane potential at time ``t`` (no reset; absent spikes ignored).

    Non-leaky: v(t) = sum_j w_j (t - t_j) over arrived spikes.
    Current-synapse: v(t) = tau * sum_j w_j (1 - exp(-(t-t_j)/tau)).
    Alpha-synapse: v(t) = 2 tau * sum_j w_j (exp(-(t-t_j)/(2 tau)) - exp(-(t-t_j)/tau)).
    """
    w, times = _check_pair(weights, inputs)
    mask = np.isfinite(times) & (times <= t)
    if not mask.any():
        return 0.0
    d = t - times[mask]
    ws = w[mask]
    if model.variant == Variant.NON_LEAKY:
        return float(np.dot(ws, d))
    tau = model.tau
    if model.variant == Variant.CURRENT_SYNAPSE:
        return float(tau * np.dot(ws, -np.expm1(-d / tau)))
    return float(2.0 * tau * np.dot(ws, np.exp(-d / (2.0 * tau)) - np.exp(-d / tau)))


def solve_firing_time(model: NeuronModelConfig, weights, inputs: SpikeVector,
                      horizon: float) -> FiringSolution:
    """Exact first threshold crossing of one neuron via the event sweep.

    Input spikes later than ``horizon`` never arrive, and a crossing later
    than ``horizon`` is reported as "did not fire".  The returned causal set
    satisfies t_j <= firing time for every member (an arrival exactly at the
    firing time is included).
    """
    w, times = _check_pair(weights, inputs)
    if horizon < 0.0 or math.isnan(horizon):
        raise ValueError("horizon must be non-negative")
    if math.isinf(horizon):
        raise ValueError("horizon must be finite")
    masked = np.where(times <= horizon, times, math.inf)
    order = np.argsort(masked, kind="stable").astype(np.int64)
    ts = masked[order]
    n = int(np.isfinite(ts).sum())
    wt = np.ascontiguousarray(w.reshape(-1, 1))
    fired = np.empty(1, np.bool_)
    tout = np.empty(1, np.float64)
    cnt = np.empty(1, np.int64)
    sumw = np.empty(1, np.float64)
    aux1 = np.empty(1, np.float64)
    aux2 = np.empty(1, np.float64)
    scratch = np.empty(1, np.float64)
    kernels._sweep_vec(int(model.variant), wt, order, ts, n,
                       model.v_threshold, model.tau, horizon,
                       fired, tout, cnt, sumw, aux1, aux2,
                       scratch.copy(), scratch.copy(), scratch.copy())
    t_fire = float(tout[0])
    s_w = float(sumw[0])
    a1 = float(aux1[0])
    a2 = float(aux2[0])
    causal = order[:int(cnt[0])].copy()
    sol = FiringSolution(
        fired=bool(fired[0]),
        time=t_fire if fired[0] else None,
        causal_set=causal,
        sum_w=s_w,
    )
    if model.variant == Variant.NON_LEAKY:
        sol.sum_wt = a1
    elif model.variant == Variant.CURRENT_SYNAPSE:
        sol.a = a1
    else:
        sol.a = a1
        sol.b = a2
        if sol.fired:
            u = math.exp(-t_fire / (2.0 * model.tau))
            sqrt_disc = 2.0 * a1 * u - a2
            sol.alpha = 1.0 / (u * sqrt_disc) if u * sqrt_disc > 0.0 else None
    return sol


def ode_oracle_simulate(model: NeuronModelConfig, weights, inputs: SpikeVector,
                        dt: float, horizon: float):
    """Forward-Euler reference simulation of the same neuron.

    Returns ``(trace, t_cross)`` where ``t_cross`` is the linearly
    interpolated first threshold crossing, or ``None`` if the potential
    stays below threshold up to the horizon.  Independent of the closed-form
    solver: it integrates the underlying two-variable ODE directly.
    """
    w, times = _check_pair(weights, inputs)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if horizon < 0.0:
        raise ValueError("horizon must be non-negative")
    mask = np.isfinite(times) & (times <= horizon)
    order = np.argsort(times[mask], kind="stable")
    w_sorted = np.ascontiguousarray(w[mask][order])
    t_sorted = np.ascontiguousarray(times[mask][order])
    n_steps = int(math.floor(horizon / dt + 1e-9))
    values = np.empty(n_steps + 1, dtype=np.float64)
    inv_tv = 0.0 if math.isinf(model.tau_v) else 1.0 / model.tau_v
    inv_ti = 0.0 if math.isinf(model.tau_i) else 1.0 / model.tau_i
    crossed, t_cross = kernels.ode_simulate(
        inv_tv, inv_ti, w_sorted, t_sorted, len(w_sorted), model.v_threshold,
        dt, n_steps, values, True)
    trace = MembraneTrace(
        sample_times=np.arange(n_steps + 1) * dt, values=values, dt=dt)
    return trace, (float(t_cross) if crossed else None)
