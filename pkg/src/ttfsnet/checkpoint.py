"""Binary checkpoint format for trained networks.

Layout, all little-endian:

* 8-byte magic ``TTFSSNN1``
* uint32 format version (currently 1)
* uint32 descriptor length, then that many bytes of UTF-8 ``key=value``
  lines describing the network (architecture string, input shape, neuron
  variant, tau, threshold, conv padding)
* float64 weights for every spiking layer in order: dense layers as
  (n_out, n_in) row-major, conv layers as (out_c, in_c, k, k) row-major.

Weights round-trip bitwise; the descriptor is enough to rebuild the
:class:`~ttfsnet.layers.NetworkSpec` without further context.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .layers import (ConvLayerParams, DenseLayerParams, NetworkSpec,
                     architecture_string, build_network)
from .neuron import NeuronModelConfig, Variant

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint",
           "MAGIC", "VERSION"]

MAGIC = b"TTFSSNN1"
VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


def _descriptor(spec: NetworkSpec) -> str:
    padding = 0
    for layer in spec.layers:
        if isinstance(layer, ConvLayerParams):
            padding = layer.padding
            break
    lines = [
        f"arch={architecture_string(spec)}",
        "input_shape=" + ",".join(str(int(d)) for d in spec.input_shape),
        f"variant={spec.model.variant.label}",
        f"tau={spec.model.tau!r}",
        f"v_threshold={spec.model.v_threshold!r}",
        f"padding={padding}",
    ]
    return "\n".join(lines) + "\n"


def _parse_descriptor(text: str) -> NetworkSpec:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"bad descriptor line: {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        arch = fields["arch"]
        input_shape = tuple(int(x) for x in fields["input_shape"].split(","))
        model = NeuronModelConfig(
            variant=Variant.from_string(fields["variant"]),
            tau=float(fields["tau"]),
            v_threshold=float(fields["v_threshold"]))
        padding = int(fields.get("padding", "0"))
    except KeyError as exc:
        raise CheckpointError(f"descriptor missing field {exc}") from None
    except ValueError as exc:
        raise CheckpointError(f"bad descriptor value: {exc}") from None
    return build_network(arch, input_shape, model, padding=padding, seed=0)


def save_checkpoint(path: Union[str, Path], spec: NetworkSpec) -> None:
    desc = _descriptor(spec).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<I", len(desc)), desc]
    for layer in spec.layers:
        if isinstance(layer, DenseLayerParams):
            chunks.append(np.ascontiguousarray(
                layer.weights, dtype="<f8").tobytes())
        elif isinstance(layer, ConvLayerParams):
            chunks.append(np.ascontiguousarray(
                layer.kernels, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Union[str, Path]) -> NetworkSpec:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    version = struct.unpack_from("<I", raw, off)[0]
    off += 4
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} "
            f"(this reader handles {VERSION})")
    desc_len = struct.unpack_from("<I", raw, off)[0]
    off += 4
    if len(raw) < off + desc_len:
        raise CheckpointError(f"{path}: descriptor truncated")
    spec = _parse_descriptor(raw[off: off + desc_len].decode("utf-8"))
    off += desc_len

    payload = raw[off:]
    shapes = [a.shape for a in spec.weight_arrays()]
    expected = sum(8 * int(np.prod(s)) for s in shapes)
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: weight payload is {len(payload)} bytes but the "
            f"descriptor implies {expected}")
    arrays = []
    pos = 0
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=pos)
        arrays.append(arr.reshape(shape).astype(np.float64))
        pos += 8 * n
    spec.set_weight_arrays(arrays)
    return spec
