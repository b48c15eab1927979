"""Network structure and spike-propagation passes.

A network is a stack of dense, convolution (stride 1), and 2x2 min-pooling
layers over a spiking input.  Spike times flow forward layer by layer; every
spiking layer solves its neurons' firing times in closed form via the event
sweep in :mod:`ttfsnet.kernels`.  Pooling layers forward the earliest spike
of each window and remember the winner for routing gradients back.

The batched entry point is :func:`forward_batch`, which records everything
the backward pass and the regularizers need into a :class:`ForwardTrace`.
The single-sample helpers (:func:`forward_dense`, :func:`forward_conv`,
:func:`network_forward`, ...) wrap the same kernels with a batch of one.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .neuron import FiringSolution, NeuronModelConfig, SpikeVector, Variant

INF = math.inf


# ---------------------------------------------------------------------------
# layer parameter containers
# ---------------------------------------------------------------------------

@dataclass
class DenseLayerParams:
    """Fully connected layer; ``weights`` is (n_out, n_in)."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("dense weights must be a 2-D (n_out, n_in) matrix")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class ConvLayerParams:
    """2-D convolution, stride 1; ``kernels`` is (out_c, in_c, k, k).

    ``padding`` zero-pads the spatial border, but padded positions carry no
    spikes (they are absent inputs, not spikes at t=0).
    """

    kernels: np.ndarray
    padding: int
    in_shape: Tuple[int, int, int]

    def __post_init__(self):
        self.kernels = np.ascontiguousarray(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 4 or self.kernels.shape[2] != self.kernels.shape[3]:
            raise ValueError("conv kernels must be (out_c, in_c, k, k)")
        if self.padding not in (0, 1):
            raise ValueError("padding must be 0 or 1")
        if self.kernels.shape[1] != self.in_shape[2]:
            raise ValueError("kernel in_channels does not match input shape")

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def out_shape(self) -> Tuple[int, int, int]:
        h, w, _ = self.in_shape
        k = self.kernel_size
        p = self.padding
        return (h + 2 * p - k + 1, w + 2 * p - k + 1, self.out_channels)

    @property
    def patch_len(self) -> int:
        return self.kernel_size * self.kernel_size * self.in_shape[2]


@dataclass(frozen=True)
class PoolSpec:
    """2x2 stride-2 minimum-time pooling; odd trailing rows/cols are dropped."""

    in_shape: Tuple[int, int, int]

    @property
    def out_shape(self) -> Tuple[int, int, int]:
        h, w, c = self.in_shape
        return (h // 2, w // 2, c)


Layer = Union[DenseLayerParams, ConvLayerParams, PoolSpec]


@dataclass
class NetworkSpec:
    """A full network: input shape, layer stack, and the neuron model."""

    input_shape: Tuple[int, ...]
    layers: List[Layer]
    model: NeuronModelConfig

    def __post_init__(self):
        shape = tuple(self.input_shape)
        for li, layer in enumerate(self.layers):
            if isinstance(layer, DenseLayerParams):
                flat = int(np.prod(shape))
                if layer.n_in != flat:
                    raise ValueError(
                        f"layer {li}: dense expects {layer.n_in} inputs, got {flat}")
                shape = (layer.n_out,)
            elif isinstance(layer, ConvLayerParams):
                if tuple(layer.in_shape) != tuple(shape):
                    raise ValueError(
                        f"layer {li}: conv expects input {layer.in_shape}, got {shape}")
                shape = layer.out_shape
            elif isinstance(layer, PoolSpec):
                if tuple(layer.in_shape) != tuple(shape):
                    raise ValueError(
                        f"layer {li}: pool expects input {layer.in_shape}, got {shape}")
                shape = layer.out_shape
            else:
                raise TypeError(f"unknown layer type: {type(layer)!r}")
        if not self.layers or not isinstance(self.layers[-1], DenseLayerParams):
            raise ValueError("network must end in a dense layer")
        self.output_shape = shape

    @property
    def n_outputs(self) -> int:
        return int(np.prod(self.output_shape))

    def spiking_indices(self) -> List[int]:
        return [i for i, l in enumerate(self.layers)
                if not isinstance(l, PoolSpec)]

    def hidden_spiking_indices(self) -> List[int]:
        return self.spiking_indices()[:-1]

    def weight_arrays(self) -> List[np.ndarray]:
        out = []
        for l in self.layers:
            if isinstance(l, DenseLayerParams):
                out.append(l.weights)
            elif isinstance(l, ConvLayerParams):
                out.append(l.kernels)
        return out

    def set_weight_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        it = iter(arrays)
        for l in self.layers:
            if isinstance(l, DenseLayerParams):
                l.weights = np.ascontiguousarray(next(it), dtype=np.float64)
            elif isinstance(l, ConvLayerParams):
                l.kernels = np.ascontiguousarray(next(it), dtype=np.float64)


# ---------------------------------------------------------------------------
# architecture strings
# ---------------------------------------------------------------------------

_CONV_RE = re.compile(r"^conv\((\d+),(\d+)\)$", re.IGNORECASE)


def parse_architecture(text: str):
    """Parse an architecture string like ``Conv(5,6)-Pool-Conv(5,16)-Pool-400-400-10``
    or ``784-400-10`` into a token list of ("conv", k, oc) / ("pool",) /
    ("dense", n) tuples."""
    tokens = []
    for part in text.strip().split("-"):
        part = part.strip()
        if not part:
            raise ValueError(f"bad architecture string: {text!r}")
        m = _CONV_RE.match(part)
        if m:
            tokens.append(("conv", int(m.group(1)), int(m.group(2))))
        elif part.lower() == "pool":
            tokens.append(("pool",))
        elif part.isdigit():
            tokens.append(("dense", int(part)))
        else:
            raise ValueError(f"bad architecture token: {part!r}")
    if not tokens or tokens[-1][0] != "dense":
        raise ValueError("architecture must end with an output width")
    seen_dense = False
    for t in tokens:
        if t[0] == "dense":
            seen_dense = True
        elif seen_dense:
            raise ValueError("conv/pool layers must precede dense layers")
    return tokens


def build_network(arch: str, input_shape: Sequence[int],
                  model: NeuronModelConfig, padding: int = 0,
                  seed: int = 0) -> NetworkSpec:
    """Construct a network from an architecture string with random weights.

    Weights are normal with std sqrt(2/fan_in) and a mean chosen so the
    expected causal weight sum is 2*V_th (2*V_th/tau for the leaky
    variants, whose effective drive scales with the synaptic constant), so
    a typical neuron meets its firing condition with margin at start.
    Each unit's total input weight is additionally floored at V_th
    (V_th/tau for the leaky variants) by an even shift across the row: a
    unit whose weights sum negative can never fire, firing never starts a
    gradient, so such units are stuck from step one and units near the
    boundary die in the first noisy epoch. The floor costs nothing in
    expectation (only the low tail moves) and removes the seed lottery.

    When the string carries no conv layers, a leading integer equal to the
    flattened input size is accepted (and checked) as the input width.
    """
    tokens = parse_architecture(arch)
    input_shape = tuple(int(s) for s in input_shape)
    has_conv = any(t[0] == "conv" for t in tokens)
    flat_in = int(np.prod(input_shape))
    if not has_conv:
        if len(tokens) < 2:
            raise ValueError(
                "an all-dense architecture needs at least input and output "
                "widths, e.g. '784-10'")
        if tokens[0][1] != flat_in:
            raise ValueError(
                f"architecture {arch!r} declares {tokens[0][1]} inputs but "
                f"the input shape {input_shape} flattens to {flat_in}")
        tokens = tokens[1:]
    rng = np.random.default_rng(seed)
    if model.variant == Variant.NON_LEAKY:
        tau_eff = 1.0
    else:
        tau_eff = model.tau
    floor = model.v_threshold / tau_eff

    def lift_rows(w2d: np.ndarray) -> None:
        deficit = np.maximum(floor - w2d.sum(axis=1), 0.0)
        w2d += (deficit / w2d.shape[1])[:, None]

    layers: List[Layer] = []
    shape = input_shape
    for tok in tokens:
        if tok[0] == "conv":
            k, oc = tok[1], tok[2]
            if len(shape) != 3:
                raise ValueError("conv layer needs an (H, W, C) input")
            fan_in = k * k * shape[2]
            mu = 2.0 * model.v_threshold / (tau_eff * fan_in)
            kern = rng.normal(mu, math.sqrt(2.0 / fan_in), size=(oc, shape[2], k, k))
            lift_rows(kern.reshape(oc, -1))
            layer = ConvLayerParams(kern, padding, shape)
            layers.append(layer)
            shape = layer.out_shape
        elif tok[0] == "pool":
            if len(shape) != 3:
                raise ValueError("pool layer needs an (H, W, C) input")
            layer = PoolSpec(shape)
            layers.append(layer)
            shape = layer.out_shape
        else:
            n_out = tok[1]
            fan_in = int(np.prod(shape))
            mu = 2.0 * model.v_threshold / (tau_eff * fan_in)
            w = rng.normal(mu, math.sqrt(2.0 / fan_in), size=(n_out, fan_in))
            lift_rows(w)
            layers.append(DenseLayerParams(w))
            shape = (n_out,)
    return NetworkSpec(input_shape, layers, model)


def architecture_string(spec: NetworkSpec) -> str:
    parts = []
    if all(isinstance(l, DenseLayerParams) for l in spec.layers):
        parts.append(str(int(np.prod(spec.input_shape))))
    for l in spec.layers:
        if isinstance(l, ConvLayerParams):
            parts.append(f"Conv({l.kernel_size},{l.out_channels})")
        elif isinstance(l, PoolSpec):
            parts.append("Pool")
        else:
            parts.append(str(l.n_out))
    return "-".join(parts)


# ---------------------------------------------------------------------------
# batched forward
# ---------------------------------------------------------------------------

def conv_patch_map(layer: ConvLayerParams) -> np.ndarray:
    """(n_pos, patch_len) flat input index per patch slot, -1 for padding.

    Slot order is (ky, kx, in_c), matching the per-channel kernel flattening
    kernels[oc].transpose(1, 2, 0).ravel().
    """
    h, w, c = layer.in_shape
    k = layer.kernel_size
    p = layer.padding
    ho, wo, _ = layer.out_shape
    pm = np.full((ho * wo, k * k * c), -1, dtype=np.int64)
    pos = 0
    for oy in range(ho):
        for ox in range(wo):
            slot = 0
            for ky in range(k):
                for kx in range(k):
                    iy = oy - p + ky
                    ix = ox - p + kx
                    for ic in range(c):
                        if 0 <= iy < h and 0 <= ix < w:
                            pm[pos, slot] = (iy * w + ix) * c + ic
                        slot += 1
            pos += 1
    return pm


def _sorted_views(times: np.ndarray):
    """Stable argsort along the last axis; returns (ts, order, npres)."""
    order = np.argsort(times, axis=-1, kind="stable").astype(np.int64)
    ts = np.take_along_axis(times, order, axis=-1)
    npres = np.isfinite(ts).sum(axis=-1).astype(np.int64)
    return np.ascontiguousarray(ts), np.ascontiguousarray(order), npres


@dataclass
class SpikingRecord:
    """Everything the backward pass needs about one spiking layer."""

    index: int
    kind: str                      # "dense" | "conv"
    wt: np.ndarray                 # input-major weights used by the kernels
    ts: np.ndarray                 # sorted input times
    order: np.ndarray
    npres: np.ndarray
    fired: np.ndarray
    tout: np.ndarray               # +inf where unfired
    cnt: np.ndarray
    sumw: np.ndarray
    aux1: np.ndarray
    aux2: np.ndarray
    out_times: np.ndarray          # (B, n_flat) output spike times
    n_neurons: int                 # flattened output count
    patch_map: Optional[np.ndarray] = None   # conv only
    n_in_flat: int = 0


@dataclass
class PoolRecord:
    index: int
    kind: str                      # "pool"
    route: np.ndarray              # (B, n_out_flat) flat source index
    out_times: np.ndarray          # (B, n_out_flat)
    in_size: int


@dataclass
class ForwardTrace:
    """Batched forward pass record.

    ``records`` is parallel to ``spec.layers``.  Single-sample consumers
    (the public per-sample API) use batch size 1 and the accessors below.
    """

    spec: NetworkSpec
    input_times: np.ndarray        # (B, flat_in), +inf absent
    records: List[Union[SpikingRecord, PoolRecord]]

    @property
    def batch_size(self) -> int:
        return self.input_times.shape[0]

    @property
    def output_times(self) -> np.ndarray:
        return self.records[-1].out_times

    def spiking_records(self) -> List[SpikingRecord]:
        return [r for r in self.records if isinstance(r, SpikingRecord)]

    def hidden_spiking_records(self) -> List[SpikingRecord]:
        return self.spiking_records()[:-1]

    def firing_solutions(self, layer_index: int, sample: int = 0
                         ) -> List[FiringSolution]:
        """Materialize per-neuron FiringSolution objects for one layer."""
        rec = self.records[layer_index]
        if not isinstance(rec, SpikingRecord):
            raise ValueError("pooling layers have no firing solutions")
        return record_solutions(rec, self.spec.model, sample)


def record_solutions(rec: SpikingRecord, model: NeuronModelConfig,
                     sample: int = 0) -> List[FiringSolution]:
    """Expand one sample of a SpikingRecord into FiringSolution objects.

    Causal sets are flat input indices of the layer (for conv layers the
    patch slots are mapped back through the patch map), in arrival order.
    """
    out = []
    fired = rec.fired.reshape(rec.fired.shape[0], -1)
    tout = rec.tout.reshape(fired.shape)
    cnt = rec.cnt.reshape(fired.shape)
    sumw = rec.sumw.reshape(fired.shape)
    aux1 = rec.aux1.reshape(fired.shape)
    aux2 = rec.aux2.reshape(fired.shape)
    for i in range(fired.shape[1]):
        if rec.kind == "dense":
            order = rec.order[sample]
            c = int(cnt[sample, i])
            causal = order[:c].copy()
        else:
            p = i // rec.wt.shape[1]
            order = rec.order[sample, p]
            c = int(cnt[sample, i])
            causal = rec.patch_map[p][order[:c]].copy()
        f = bool(fired[sample, i])
        t_i = float(tout[sample, i]) if f else None
        sol = FiringSolution(fired=f, time=t_i, causal_set=causal,
                             sum_w=float(sumw[sample, i]))
        if model.variant == Variant.NON_LEAKY:
            sol.sum_wt = float(aux1[sample, i])
        elif model.variant == Variant.CURRENT_SYNAPSE:
            sol.a = float(aux1[sample, i])
        else:
            sol.a = float(aux1[sample, i])
            sol.b = float(aux2[sample, i])
            if f:
                u = math.exp(-t_i / (2.0 * model.tau))
                sd = 2.0 * sol.a * u - sol.b
                sol.alpha = 1.0 / (u * sd) if u * sd > 0.0 else None
        out.append(sol)
    return out


def _dense_record(index: int, layer: DenseLayerParams,
                  model: NeuronModelConfig, times: np.ndarray,
                  horizon: float) -> SpikingRecord:
    wt = np.ascontiguousarray(layer.weights.T)
    ts, order, npres = _sorted_views(times)
    b = times.shape[0]
    n_out = layer.n_out
    fired = np.empty((b, n_out), np.bool_)
    tout = np.empty((b, n_out), np.float64)
    cnt = np.empty((b, n_out), np.int64)
    sumw = np.empty((b, n_out), np.float64)
    aux1 = np.empty((b, n_out), np.float64)
    aux2 = np.empty((b, n_out), np.float64)
    kernels.dense_forward(int(model.variant), wt, ts, order, npres,
                          model.v_threshold, model.tau, horizon,
                          fired, tout, cnt, sumw, aux1, aux2)
    return SpikingRecord(index, "dense", wt, ts, order, npres, fired, tout,
                         cnt, sumw, aux1, aux2, tout, n_out,
                         n_in_flat=times.shape[1])


def _conv_record(index: int, layer: ConvLayerParams,
                 model: NeuronModelConfig, times_flat: np.ndarray,
                 horizon: float,
                 patch_map: Optional[np.ndarray] = None) -> SpikingRecord:
    if patch_map is None:
        patch_map = conv_patch_map(layer)
    b, n_flat = times_flat.shape
    ext = np.concatenate([times_flat, np.full((b, 1), INF)], axis=1)
    idx = np.where(patch_map < 0, n_flat, patch_map)
    patches = ext[:, idx]                          # (B, n_pos, plen)
    ts, order, npres = _sorted_views(patches)
    oc = layer.out_channels
    n_pos = patch_map.shape[0]
    wft = np.ascontiguousarray(
        layer.kernels.transpose(2, 3, 1, 0).reshape(-1, oc))
    fired = np.empty((b, n_pos, oc), np.bool_)
    tout = np.empty((b, n_pos, oc), np.float64)
    cnt = np.empty((b, n_pos, oc), np.int64)
    sumw = np.empty((b, n_pos, oc), np.float64)
    aux1 = np.empty((b, n_pos, oc), np.float64)
    aux2 = np.empty((b, n_pos, oc), np.float64)
    kernels.conv_forward(int(model.variant), wft, ts, order, npres,
                         model.v_threshold, model.tau, horizon,
                         fired, tout, cnt, sumw, aux1, aux2)
    out_times = tout.reshape(b, n_pos * oc)
    return SpikingRecord(index, "conv", wft, ts, order, npres, fired, tout,
                         cnt, sumw, aux1, aux2, out_times, n_pos * oc,
                         patch_map=patch_map, n_in_flat=n_flat)


def _pool_record(index: int, layer: PoolSpec,
                 times_flat: np.ndarray) -> PoolRecord:
    h, w, c = layer.in_shape
    ho, wo, _ = layer.out_shape
    b = times_flat.shape[0]
    x = times_flat.reshape(b, h, w, c)[:, :2 * ho, :2 * wo, :]
    xw = (x.reshape(b, ho, 2, wo, 2, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(b, ho, wo, c, 4))
    win = np.argmin(xw, axis=-1)                   # first minimum wins ties
    out = np.take_along_axis(xw, win[..., None], axis=-1)[..., 0]
    dy, dx = win // 2, win % 2
    oy = np.arange(ho)[None, :, None, None]
    ox = np.arange(wo)[None, None, :, None]
    cc = np.arange(c)[None, None, None, :]
    src = ((2 * oy + dy) * w + (2 * ox + dx)) * c + cc
    return PoolRecord(index, "pool",
                      src.reshape(b, ho * wo * c).astype(np.int64),
                      out.reshape(b, ho * wo * c), h * w * c)


def forward_batch(spec: NetworkSpec, times: np.ndarray,
                  horizon: float) -> ForwardTrace:
    """Run the network on a batch of flattened input spike times.

    ``times`` is (B, flat_in) float64 with +inf marking absent inputs;
    entries later than the horizon are treated as absent.
    """
    times = np.ascontiguousarray(times, dtype=np.float64)
    times = np.where(times <= horizon, times, INF)
    trace = ForwardTrace(spec, times, [])
    cur = times
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, DenseLayerParams):
            rec = _dense_record(li, layer, spec.model, cur, horizon)
        elif isinstance(layer, ConvLayerParams):
            rec = _conv_record(li, layer, spec.model, cur, horizon)
        else:
            rec = _pool_record(li, layer, cur)
        trace.records.append(rec)
        cur = rec.out_times
    return trace


# ---------------------------------------------------------------------------
# public single-sample operations
# ---------------------------------------------------------------------------

def forward_dense(params: DenseLayerParams, model: NeuronModelConfig,
                  inputs: SpikeVector, horizon: float):
    """One dense layer on one sample: (output SpikeVector, FiringSolutions)."""
    flat = inputs.flat().times[None, :]
    if flat.shape[1] != params.n_in:
        raise ValueError(f"dense input size {flat.shape[1]} != {params.n_in}")
    flat = np.where(flat <= horizon, flat, INF)
    rec = _dense_record(0, params, model, flat, horizon)
    return SpikeVector(rec.out_times[0].copy()), record_solutions(rec, model)


def forward_conv(params: ConvLayerParams, model: NeuronModelConfig,
                 inputs: SpikeVector, horizon: float):
    """One conv layer on one (H, W, C) sample.

    Returns the spatial output SpikeVector and the FiringSolution list in
    (row, col, channel) flat order; causal sets are flat input indices.
    """
    if inputs.times.shape != tuple(params.in_shape):
        raise ValueError(
            f"conv input shape {inputs.times.shape} != {params.in_shape}")
    flat = inputs.times.reshape(1, -1)
    flat = np.where(flat <= horizon, flat, INF)
    rec = _conv_record(0, params, model, flat, horizon)
    sols = record_solutions(rec, model)
    return SpikeVector(rec.out_times[0].reshape(params.out_shape).copy()), sols


def forward_pool(spec: PoolSpec, inputs: SpikeVector):
    """Min-time 2x2/stride-2 pooling on one (H, W, C) sample.

    Returns the pooled SpikeVector and the routing array of flat input
    indices (ties go to the lowest flat index).
    """
    if inputs.times.shape != tuple(spec.in_shape):
        raise ValueError(
            f"pool input shape {inputs.times.shape} != {spec.in_shape}")
    rec = _pool_record(0, spec, inputs.times.reshape(1, -1))
    out = rec.out_times[0].reshape(spec.out_shape).copy()
    route = rec.route[0].reshape(spec.out_shape).copy()
    return SpikeVector(out), route


def network_forward(spec: NetworkSpec, inputs: SpikeVector,
                    horizon: float) -> ForwardTrace:
    """Full forward pass on one sample (a batch of one internally)."""
    flat = inputs.flat().times[None, :]
    if flat.shape[1] != int(np.prod(spec.input_shape)):
        raise ValueError("input size does not match the network input shape")
    return forward_batch(spec, flat, horizon)
