"""Dense ReLU/softmax classifier over a flat parameter vector.

Parameters live in one float64 array. Layer ``l`` occupies a contiguous slice:
its weight matrix in row-major ``[out][in]`` order, then its bias vector. Every
node of a training run uses this same layout, which is what lets the
coordinator average parameter vectors coordinate by coordinate.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CorruptionError, FormatError, SchemaError, UsageError

BLOB_MAGIC = b"FAVG"
BLOB_VERSION = 1
_BLOB_HEAD = struct.Struct("<4sBBH")
_BLOB_DIMS = struct.Struct("<II")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.dims
        if any(int(d) != d or d < 1 for d in dims):
            raise SchemaError(f"all layer dims must be positive integers, got {dims}")
        if len(dims) - 1 > 255:
            raise SchemaError("at most 255 layers are supported")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(fan_in, fan_out)`` of each layer in order."""
        d = self.dims
        return list(zip(d[:-1], d[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        try:
            return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), int(d["output_dim"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad model spec {d!r}") from exc


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Model weights as one read-only flat float64 array plus its spec."""

    spec: ModelSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size != self.spec.n_params:
            raise SchemaError(
                f"expected {self.spec.n_params} parameters for {self.spec}, got {values.size}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _split_layers(self.spec, self.values)

    def copy_values(self) -> np.ndarray:
        return self.values.copy()

    def bitwise_equal(self, other: ParameterVector) -> bool:
        return self.spec == other.spec and self.values.tobytes() == other.values.tobytes()


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray


def _split_layers(spec, flat):
    """Views ``(W, b)`` into ``flat``; writes through when ``flat`` is writeable."""
    out = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = flat[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_params(spec: ModelSpec, seed: int) -> ParameterVector:
    """Glorot-uniform weights from a splitmix64 stream, zero biases.

    Weights are drawn layer by layer in canonical order as ``(2u - 1) * L``
    with ``L = sqrt(6 / (fan_in + fan_out))``.
    """
    flat = np.zeros(spec.n_params)
    state = int(seed) & kernels.MASK64
    for (fan_in, fan_out), (w, _) in zip(spec.layer_shapes, _split_layers(spec, flat)):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        u, state = kernels.uniform_fill(state, fan_in * fan_out)
        w[...] = ((2.0 * u - 1.0) * limit).reshape(fan_out, fan_in)
    return ParameterVector(spec, flat)


def _check_batch(spec, batch):
    x = np.asarray(batch.features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise SchemaError(f"batch features of shape {x.shape} do not match input_dim={spec.input_dim}")
    if x.shape[0] < 1:
        raise SchemaError("batch must contain at least one sample")
    y = np.asarray(batch.labels).astype(np.int64, copy=False)
    if y.shape != (x.shape[0],):
        raise SchemaError("labels must be a vector with one entry per feature row")
    if y.size and (y.min() < 0 or y.max() >= spec.output_dim):
        raise SchemaError(f"labels must lie in [0, {spec.output_dim})")
    return x, y


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True), shifted, e


def forward(params: ParameterVector, batch) -> np.ndarray:
    """Class probabilities, one row per sample."""
    x = np.asarray(batch.features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise SchemaError(f"features of shape {x.shape} do not match input_dim={params.spec.input_dim}")
    layers = params.layers()
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w.T + b, 0.0)
    w, b = layers[-1]
    return _softmax(a @ w.T + b)[0]


def _loss_grad_into(layers, grads, x, y):
    """Mean cross-entropy of one batch; writes the gradient into ``grads`` views."""
    n = x.shape[0]
    acts = [x]
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w.T + b, 0.0)
        acts.append(a)
    w, b = layers[-1]
    probs, shifted, e = _softmax(a @ w.T + b)
    rows = np.arange(n)
    loss = float(np.mean(np.log(e.sum(axis=1)) - shifted[rows, y]))

    delta = probs
    delta[rows, y] -= 1.0
    delta /= n
    for l in range(len(layers) - 1, -1, -1):
        gw, gb = grads[l]
        np.matmul(delta.T, acts[l], out=gw)
        np.sum(delta, axis=0, out=gb)
        if l:
            delta = delta @ layers[l][0]
            delta *= acts[l] > 0.0
    return loss


def loss_and_grad(params: ParameterVector, batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in parameter layout."""
    x, y = _check_batch(params.spec, batch)
    grad = np.empty(params.spec.n_params)
    loss = _loss_grad_into(params.layers(), _split_layers(params.spec, grad), x, y)
    return loss, grad


def sgd_step(params: ParameterVector, grad, eta: float) -> ParameterVector:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise SchemaError(f"gradient of shape {grad.shape} does not match {params.values.shape}")
    return ParameterVector(params.spec, params.values - eta * grad)


class SGDTrainer:
    """Mutable working copy used by the training loops.

    Runs the same arithmetic as repeated ``loss_and_grad`` + ``sgd_step`` calls
    but reuses one gradient buffer and updates in place.
    """

    def __init__(self, params: ParameterVector):
        self.spec = params.spec
        self.values = params.copy_values()
        self._layers = _split_layers(self.spec, self.values)
        self._grad = np.empty(self.spec.n_params)
        self._grad_layers = _split_layers(self.spec, self._grad)

    def step(self, x, y, eta):
        loss = _loss_grad_into(self._layers, self._grad_layers, x, y)
        self.values -= eta * self._grad
        return loss

    def params(self) -> ParameterVector:
        return ParameterVector(self.spec, self.values)


def predict(params: ParameterVector, features) -> np.ndarray:
    """Argmax class per row; ``np.argmax`` returns the lowest index on ties."""
    return np.argmax(forward(params, Batch(features, np.zeros(len(features)))), axis=1)


def evaluate_accuracy(params: ParameterVector, dataset) -> float:
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise UsageError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(predict(params, dataset.features) == labels))


def serialize_params(params: ParameterVector) -> bytes:
    shapes = params.spec.layer_shapes
    parts = [_BLOB_HEAD.pack(BLOB_MAGIC, BLOB_VERSION, len(shapes), 0)]
    parts.extend(_BLOB_DIMS.pack(fi, fo) for fi, fo in shapes)
    parts.append(params.values.astype("<f8", copy=False).tobytes())
    return b"".join(parts)


def blob_spec(blob: bytes) -> ModelSpec:
    """Read the model spec from a blob header without decoding the values."""
    if len(blob) < _BLOB_HEAD.size:
        raise FormatError("parameter blob shorter than its header")
    magic, version, n_layers, reserved = _BLOB_HEAD.unpack_from(blob)
    if magic != BLOB_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != BLOB_VERSION:
        raise FormatError(f"unsupported blob version {version}")
    if reserved != 0:
        raise FormatError("reserved header field must be zero")
    if n_layers < 1:
        raise FormatError("blob declares zero layers")
    end = _BLOB_HEAD.size + n_layers * _BLOB_DIMS.size
    if len(blob) < end:
        raise FormatError("parameter blob truncated inside the layer table")
    shapes = [_BLOB_DIMS.unpack_from(blob, _BLOB_HEAD.size + i * _BLOB_DIMS.size)
              for i in range(n_layers)]
    for (_, fo), (fi, _) in zip(shapes[:-1], shapes[1:]):
        if fo != fi:
            raise FormatError("layer table is not chained: fan_out != next fan_in")
    try:
        return ModelSpec(shapes[0][0], tuple(fo for _, fo in shapes[:-1]), shapes[-1][1])
    except SchemaError as exc:
        raise FormatError(str(exc)) from exc


def deserialize_params(blob: bytes, spec: ModelSpec | None = None) -> ParameterVector:
    """Inverse of ``serialize_params``. With ``spec`` given, the header must match it."""
    blob = bytes(blob)
    found = blob_spec(blob)
    if spec is not None and found != spec:
        raise FormatError(f"blob encodes {found}, expected {spec}")
    start = _BLOB_HEAD.size + len(found.layer_shapes) * _BLOB_DIMS.size
    if len(blob) != start + 8 * found.n_params:
        raise FormatError(
            f"blob has {len(blob) - start} value bytes, expected {8 * found.n_params}")
    values = np.frombuffer(blob, dtype="<f8", offset=start).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise CorruptionError("parameter blob contains NaN or Inf")
    return ParameterVector(found, values)
