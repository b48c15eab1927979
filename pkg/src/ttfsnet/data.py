"""Dataset loading and spike-time encoding.

Readers for the classic IDX image/label format and the CIFAR-10 binary
batches, a bundled Iris table, intensity-to-latency encoders, and the
standard augmentation stack (flip / rotate / pad-and-crop) applied to
pixel intensities before encoding.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "DataFormatError",
    "Dataset",
    "load_idx",
    "load_cifar10",
    "load_iris",
    "encode_ttfs",
    "decode_ttfs",
    "double_channels",
    "encode_iris",
    "augment",
    "mnist_dataset",
    "cifar10_dataset",
    "iris_dataset",
]

DEFAULT_TAU_IN = 5.0

_IDX_MAGIC_IMAGES = 0x00000803
_IDX_MAGIC_LABELS = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixels


class DataFormatError(ValueError):
    """A dataset file exists but its contents are malformed."""


@dataclass(frozen=True)
class Dataset:
    """Encoded spike times plus labels.

    ``times`` is (n_samples, n_inputs) float64; ``input_shape`` is the
    spatial shape the flat input axis unrolls to ((H, W, C) for images,
    (n,) for tabular data).
    """

    times: np.ndarray
    labels: np.ndarray
    input_shape: Tuple[int, ...]

    @property
    def n_samples(self) -> int:
        return int(self.times.shape[0])

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.times[:n], self.labels[:n], self.input_shape)


# ---------------------------------------------------------------------------
# raw file formats
# ---------------------------------------------------------------------------

def _read_bytes(path: Union[str, Path]) -> bytes:
    p = Path(path)
    if p.suffix == ".gz":
        with gzip.open(p, "rb") as fh:
            return fh.read()
    return p.read_bytes()


def load_idx(path: Union[str, Path]) -> np.ndarray:
    """Read one big-endian IDX file (uint8 images or labels).

    Accepts the two standard variants: magic 0x00000803 (3-D image
    tensor) and 0x00000801 (1-D label vector). ``.gz`` files are
    decompressed transparently.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(
            f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == _IDX_MAGIC_IMAGES:
        ndim = 3
    elif magic == _IDX_MAGIC_LABELS:
        ndim = 1
    else:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x} "
            f"(expected 0x{_IDX_MAGIC_LABELS:08x} or 0x{_IDX_MAGIC_IMAGES:08x})")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(
            f"{path}: truncated IDX header, expected {header} bytes, "
            f"got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for shape {dims}, "
            f"got {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(dims).copy()


def load_cifar10(paths: Sequence[Union[str, Path]]
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batches; returns (images (N,32,32,3) uint8, labels)."""
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a multiple of the "
                f"{_CIFAR_RECORD}-byte record")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        lab = rec[:, 0].astype(np.int64)
        if lab.size and lab.max() > 9:
            raise DataFormatError(
                f"{path}: label {int(lab.max())} outside the valid range 0..9")
        img = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(img)
        labels.append(lab)
    return np.concatenate(images), np.concatenate(labels)


def load_iris() -> Tuple[np.ndarray, np.ndarray]:
    """Bundled Iris table, min-max normalized per feature to [0, 1].

    Returns (features (150, 4) float64, labels (150,) int64).
    """
    path = Path(__file__).parent / "data" / "iris.csv"
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    if rows.shape != (150, 5):
        raise DataFormatError(
            f"{path}: expected 150 rows of 5 columns, got {rows.shape}")
    feats = rows[:, :4].astype(np.float64)
    labels = rows[:, 4].astype(np.int64)
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    feats = (feats - lo) / (hi - lo)
    return feats, labels


# ---------------------------------------------------------------------------
# latency encoding
# ---------------------------------------------------------------------------

def encode_ttfs(intensities: np.ndarray,
                tau_in: float = DEFAULT_TAU_IN) -> np.ndarray:
    """Map intensities in [0, 1] to spike times ``tau_in * (1 - x)``.

    Bright inputs spike early, dark inputs late; a zero pixel spikes
    exactly at ``tau_in``. uint8 arrays are scaled by 1/255 first.
    """
    x = np.asarray(intensities)
    if x.dtype.kind in "ui":
        x = x.astype(np.float64) / 255.0
    else:
        x = x.astype(np.float64)
    return tau_in * (1.0 - x)


def decode_ttfs(times: np.ndarray, tau_in: float = DEFAULT_TAU_IN) -> np.ndarray:
    """Inverse of :func:`encode_ttfs`: recover intensities from spike times."""
    return 1.0 - np.asarray(times, dtype=np.float64) / tau_in


def double_channels(intensities: np.ndarray) -> np.ndarray:
    """Append inverted copies of each channel (x -> [x, 1 - x]).

    Gives every pixel one early spike regardless of polarity, which keeps
    dark regions visible to the first layer. Input is (..., C) float in
    [0, 1] or uint8; output is (..., 2C) float64.
    """
    x = np.asarray(intensities)
    if x.dtype.kind in "ui":
        x = x.astype(np.float64) / 255.0
    else:
        x = x.astype(np.float64)
    return np.concatenate([x, 1.0 - x], axis=-1)


def encode_iris(features: np.ndarray,
                tau_in: float = DEFAULT_TAU_IN) -> np.ndarray:
    """Tabular encoding: ``t = tau_in * x`` plus a bias spike at t = 0.

    Small feature values spike early. The appended bias input fires at 0
    for every sample so each neuron has at least one guaranteed early
    input.
    """
    x = np.asarray(features, dtype=np.float64)
    times = tau_in * x
    bias = np.zeros(times.shape[:-1] + (1,))
    return np.concatenate([times, bias], axis=-1)


# ---------------------------------------------------------------------------
# augmentation (intensity space, before encoding)
# ---------------------------------------------------------------------------

def augment(images: np.ndarray, rng: np.random.Generator,
            max_rotation: float = 15.0, pad: int = 4) -> np.ndarray:
    """Flip / rotate / pad-and-crop a batch of images.

    Per image: horizontal flip with probability 0.5, rotation by a
    uniform angle in [-max_rotation, max_rotation] degrees (bilinear,
    zero fill), then a random crop from a ``pad``-pixel zero border.
    Operates on intensities in [0, 1] (uint8 input is rescaled); all
    randomness comes from ``rng`` in a fixed draw order, so the result
    is reproducible for a given seed.
    """
    from scipy import ndimage

    x = np.asarray(images)
    if x.dtype.kind in "ui":
        x = x.astype(np.float64) / 255.0
    else:
        x = x.astype(np.float64).copy()
    if x.ndim != 4:
        raise ValueError("augment expects a (N, H, W, C) batch")
    n, h, w, _ = x.shape
    out = np.empty_like(x)
    for i in range(n):
        img = x[i]
        if rng.random() < 0.5:
            img = img[:, ::-1, :]
        angle = rng.uniform(-max_rotation, max_rotation)
        img = ndimage.rotate(img, angle, axes=(0, 1), reshape=False,
                             order=1, mode="constant", cval=0.0)
        padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)))
        oy = int(rng.integers(0, 2 * pad + 1))
        ox = int(rng.integers(0, 2 * pad + 1))
        out[i] = padded[oy: oy + h, ox: ox + w, :]
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# ready-to-train datasets
# ---------------------------------------------------------------------------

def _flatten(times: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(times.reshape(times.shape[0], -1))


def mnist_dataset(data_dir: Union[str, Path], split: str = "train",
                  tau_in: float = DEFAULT_TAU_IN) -> Dataset:
    """Load and encode one MNIST split from IDX files in ``data_dir``."""
    prefix = {"train": "train", "test": "t10k"}.get(split)
    if prefix is None:
        raise ValueError(f"unknown MNIST split {split!r}")
    d = Path(data_dir)
    images = load_idx(d / f"{prefix}-images-idx3-ubyte")
    labels = load_idx(d / f"{prefix}-labels-idx1-ubyte")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{d}: {images.shape[0]} images but {labels.shape[0]} labels")
    times = encode_ttfs(images, tau_in)[..., np.newaxis]
    return Dataset(_flatten(times), labels.astype(np.int64),
                   (images.shape[1], images.shape[2], 1))


def cifar10_dataset(data_dir: Union[str, Path], split: str = "train",
                    tau_in: float = DEFAULT_TAU_IN,
                    augment_seed: Union[int, None] = None) -> Dataset:
    """Load and encode CIFAR-10 with doubled (inverted) channels.

    ``augment_seed`` applies one seeded augmentation pass to the raw
    intensities first (train split only).
    """
    d = Path(data_dir)
    if split == "train":
        paths = [d / f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        paths = [d / "test_batch.bin"]
    else:
        raise ValueError(f"unknown CIFAR-10 split {split!r}")
    images, labels = load_cifar10(paths)
    x = images.astype(np.float64) / 255.0
    if augment_seed is not None and split == "train":
        x = augment(x, np.random.default_rng(augment_seed))
    x = double_channels(x)
    times = encode_ttfs(x, tau_in)
    return Dataset(_flatten(times), labels, x.shape[1:])


def iris_dataset(tau_in: float = DEFAULT_TAU_IN) -> Dataset:
    """The bundled 150-sample Iris table, encoded with a bias spike."""
    feats, labels = load_iris()
    times = encode_iris(feats, tau_in)
    return Dataset(_flatten(times), labels, (times.shape[-1],))
