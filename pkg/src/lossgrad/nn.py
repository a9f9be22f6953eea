"""
Fully connected networks with hand-written backprop, exposed as Objectives.

Parameters live in one flat vector (per layer: weight matrix row-major, then
bias) so the optimizers never see the architecture. Losses are batch means.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .objective import FULL, Objective, as_params, check_batch

WEIGHT_STD = 0.05
BIAS_INIT = 0.2

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSSES = ("mse", "cross_entropy")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(name, z, a, upstream):
    if name == "relu":
        return upstream * (z > 0)
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    return upstream


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    loss: str = "mse"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValidationError("need at least two positive layer sizes")
        if len(acts) != len(sizes) - 1:
            raise ValidationError(f"expected {len(sizes) - 1} activations, got {len(acts)}")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ValidationError(f"unknown activation(s) {bad}")
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.loss == "cross_entropy" and acts[-1] != "identity":
            raise ValidationError("cross_entropy expects raw logits (identity final activation)")

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


@dataclass(frozen=True)
class LayerSlot:
    weight: slice
    weight_shape: tuple[int, int]
    bias: slice


def param_layout(spec: MlpSpec) -> list[LayerSlot]:
    slots = []
    offset = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = slice(offset, offset + n_out * n_in)
        offset = w.stop
        b = slice(offset, offset + n_out)
        offset = b.stop
        slots.append(LayerSlot(w, (n_out, n_in), b))
    return slots


@dataclass
class MlpParams:
    flat: np.ndarray
    layout: list[LayerSlot]

    def layers(self):
        """(W, b) views into ``flat``; W has shape (out, in)."""
        return [(self.flat[s.weight].reshape(s.weight_shape), self.flat[s.bias]) for s in self.layout]


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Weights ~ N(0, 0.05^2), biases = 0.2."""
    rng = np.random.default_rng(seed)
    layout = param_layout(spec)
    flat = np.empty(spec.n_params)
    for slot in layout:
        flat[slot.weight] = rng.normal(0.0, WEIGHT_STD, size=slot.weight.stop - slot.weight.start)
        flat[slot.bias] = BIAS_INIT
    return MlpParams(flat, layout)


@dataclass
class Dataset:
    """``targets`` is an int label vector (classification) or a float matrix (regression)."""

    features: np.ndarray
    targets: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-D (samples x dims) array")
        t = np.asarray(self.targets)
        if t.shape[0] != self.features.shape[0]:
            raise ValidationError(
                f"{self.features.shape[0]} feature rows but {t.shape[0]} target rows"
            )
        if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
            if t.size and t.min() < 0:
                raise ValidationError("class labels must be non-negative")
        else:
            t = np.asarray(t, dtype=np.float64)
            if t.ndim == 1:
                t = t[:, None]
        self.targets = t

    def __len__(self):
        return self.features.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.targets.ndim == 1


class MlpObjective(Objective):
    def __init__(self, spec: MlpSpec, dataset: Dataset):
        if dataset.features.shape[1] != spec.layer_sizes[0]:
            raise ValidationError(
                f"input dim {dataset.features.shape[1]} != network input {spec.layer_sizes[0]}"
            )
        n_out = spec.layer_sizes[-1]
        if spec.loss == "cross_entropy":
            if not dataset.is_classification:
                raise ValidationError("cross_entropy needs integer class labels")
            if len(dataset) and dataset.targets.max() >= n_out:
                raise ValidationError(f"class label exceeds output dimension {n_out}")
        elif dataset.is_classification or dataset.targets.shape[1] != n_out:
            raise ValidationError(f"mse needs a real target matrix with {n_out} columns")
        self.spec = spec
        self.dataset = dataset
        self.layout = param_layout(spec)
        self.dim = spec.n_params

    def _unpack(self, x):
        return MlpParams(x, self.layout).layers()

    def _forward(self, x, rows):
        a = self.dataset.features[rows]
        cache = [(None, a)]
        for (W, b), act in zip(self._unpack(x), self.spec.activations):
            z = a @ W.T + b
            a = _activate(act, z)
            cache.append((z, a))
        return cache

    def _loss_from_output(self, out, targets):
        """Batch-mean loss and its gradient w.r.t. the network output."""
        m = out.shape[0]
        if self.spec.loss == "cross_entropy":
            shifted = out - out.max(axis=1, keepdims=True)
            log_z = np.log(np.sum(np.exp(shifted), axis=1))
            log_p = shifted - log_z[:, None]
            loss = float(-np.mean(log_p[np.arange(m), targets]))
            d_out = np.exp(log_p)
            d_out[np.arange(m), targets] -= 1.0
            return loss, d_out / m
        diff = out - targets
        loss = float(np.mean(diff * diff))
        return loss, 2.0 * diff / diff.size

    def _loss(self, x, batch):
        rows = check_batch(batch, len(self.dataset))
        out = self._forward(x, rows)[-1][1]
        return self._loss_from_output(out, self.dataset.targets[rows])[0]

    def _loss_and_gradient(self, x, batch):
        rows = check_batch(batch, len(self.dataset))
        cache = self._forward(x, rows)
        loss, upstream = self._loss_from_output(cache[-1][1], self.dataset.targets[rows])
        grad = np.empty_like(x)
        layers = self._unpack(x)
        for k in range(self.spec.n_layers - 1, -1, -1):
            z, a = cache[k + 1]
            a_prev = cache[k][1]
            dz = _activation_grad(self.spec.activations[k], z, a, upstream)
            slot = self.layout[k]
            grad[slot.weight] = (dz.T @ a_prev).ravel()
            grad[slot.bias] = dz.sum(axis=0)
            upstream = dz @ layers[k][0]
        return loss, grad

    def predict(self, params, batch=FULL) -> np.ndarray:
        x = as_params(params, self.dim)
        return self._forward(x, check_batch(batch, len(self.dataset)))[-1][1]

    def accuracy(self, params, batch=FULL) -> float:
        if not self.dataset.is_classification:
            raise ValidationError("accuracy is only defined for classification datasets")
        rows = check_batch(batch, len(self.dataset))
        pred = np.argmax(self.predict(params, batch), axis=1)
        return float(np.mean(pred == self.dataset.targets[rows]))


def mlp_objective(spec: MlpSpec, dataset: Dataset) -> MlpObjective:
    return MlpObjective(spec, dataset)


def make_blobs(
    n: int = 1000,
    centers: Sequence[Sequence[float]] = ((-2.0, 0.0), (2.0, 0.0)),
    spread: float = 0.5,
    seed: int = 0,
) -> Dataset:
    """Two isotropic Gaussian blobs, ``n // 2`` points each, labeled 0 and 1."""
    if n <= 0 or n % 2:
        raise ValidationError(f"n must be a positive even integer, got {n}")
    if not spread > 0:
        raise ValidationError("spread must be positive")
    c = np.asarray(centers, dtype=np.float64)
    if c.shape[0] != 2 or c.ndim != 2:
        raise ValidationError("exactly two centers are required")
    rng = np.random.default_rng(seed)
    half = n // 2
    noise = rng.normal(0.0, spread, size=(n, c.shape[1]))
    features = np.repeat(c, half, axis=0) + noise
    labels = np.repeat(np.arange(2), half)
    return Dataset(features, labels, name="blobs")


def _read_header(buf: bytes, path) -> tuple[int, tuple[int, ...], int]:
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise FormatError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    rank = magic & 0xFF
    header_len = 4 + 4 * rank
    if len(buf) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{rank}I", buf[4:header_len])
    return magic, dims, header_len


def read_idx(path, expected_magic: Optional[int] = None, limit: Optional[int] = None) -> np.ndarray:
    """Raw unsigned-byte IDX array, optionally only the first ``limit`` items."""
    buf = Path(path).read_bytes()
    magic, dims, offset = _read_header(buf, path)
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    count = dims[0] if limit is None else min(dims[0], limit)
    item = int(np.prod(dims[1:], dtype=np.int64))
    need = dims[0] * item
    if len(buf) - offset < need:
        raise FormatError(f"{path}: payload has {len(buf) - offset} bytes, header promises {need}")
    data = np.frombuffer(buf, dtype=np.uint8, count=count * item, offset=offset)
    return data.reshape((count,) + tuple(dims[1:]))


def load_idx(path, labels_path=None, limit: Optional[int] = None) -> Dataset:
    """Load an MNIST-family image file (pixels scaled to [0, 1], one row per image).

    With ``labels_path`` the targets are the class labels; without it the
    images are their own targets (autoencoder setup).
    """
    images = read_idx(path, IDX_IMAGES_MAGIC, limit)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if labels_path is None:
        return Dataset(features, features.copy(), name=Path(path).name)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC, limit)
    if labels.shape[0] != features.shape[0]:
        raise FormatError(f"{labels.shape[0]} labels for {features.shape[0]} images")
    return Dataset(features, labels.astype(np.int64), name=Path(path).name)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (rank from the array shape)."""
    arr = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())
