"""Dense MLP kernel: forward/backward, softmax, cross-entropy, KL, L2, SGD.

All math is float64. Hidden layers are ReLU; the output layer is affine and
softmax is applied only inside loss computations, never stored in the model.
An optional scalar value head can be attached to the last hidden layer; it is
used by the value-cloning regularizer and is not part of the wire blob.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .rng import derive_seed, uniform_block

EPS = 1e-12  # floor inside every log


@dataclass
class MlpModel:
    """Layer dimensions plus per-layer weight matrices (out x in) and biases."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    value_weight: np.ndarray | None = None  # (last_hidden,)
    value_bias: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def has_value_head(self) -> bool:
        return self.value_weight is not None

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.value_weight is None else self.value_weight.copy(),
            self.value_bias,
        )


@dataclass
class Batch:
    """Feature matrix (n x input_dim) with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError("labels length must equal the number of feature rows")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("batch features contain NaN/Inf")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class Gradients:
    """Same shapes as the model that produced them."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_value_weight: np.ndarray | None = None
    d_value_bias: float = 0.0


@dataclass
class LossSpec:
    """Composite loss selector for backward().

    The default is plain cross-entropy on every row. A positive kl_weight adds
    mean KL(stored_probs || current probs) over `replay_rows`; a positive
    value_weight adds mean squared value-cloning over the same rows (requires
    a value head on the model).
    """

    kl_weight: float = 0.0
    value_weight: float = 0.0
    stored_probs: np.ndarray | None = None
    stored_values: np.ndarray | None = None
    replay_rows: np.ndarray | None = None

    def validate(self, model: MlpModel, batch: Batch) -> None:
        if self.kl_weight < 0 or self.value_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        needs_replay = self.kl_weight > 0 or self.value_weight > 0
        if needs_replay:
            if self.replay_rows is None or len(self.replay_rows) == 0:
                raise ConfigError("replay-weighted loss requires replay_rows")
            rows = np.asarray(self.replay_rows)
            if rows.min() < 0 or rows.max() >= len(batch):
                raise ConfigError("replay_rows out of batch range")
        if self.kl_weight > 0:
            if self.stored_probs is None:
                raise ConfigError("kl_weight > 0 requires stored_probs")
            if self.stored_probs.shape != (len(self.replay_rows), model.output_dim):
                raise DimensionError("stored_probs shape must be (n_replay, output_dim)")
        if self.value_weight > 0:
            if self.stored_values is None:
                raise ConfigError("value_weight > 0 requires stored_values")
            if not model.has_value_head:
                raise ConfigError("value_weight > 0 requires a model with a value head")
            if np.shape(self.stored_values) != (len(self.replay_rows),):
                raise DimensionError("stored_values length must equal n_replay")


def mlp_init(layer_dims: list[int], seed: int, value_head: bool = False) -> MlpModel:
    """Seeded uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {dims}")
    if any(int(d) < 1 for d in dims):
        raise ConfigError(f"all layer dims must be >= 1, got {dims}")
    dims = [int(d) for d in dims]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        u = uniform_block(derive_seed(seed, i), fan_out * fan_in)
        weights.append((bound * (2.0 * u - 1.0)).reshape(fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    model = MlpModel(dims, weights, biases)
    if value_head:
        fan_in = dims[-2]
        bound = np.sqrt(6.0 / (fan_in + 1))
        u = uniform_block(derive_seed(seed, len(dims)), fan_in)
        model.value_weight = bound * (2.0 * u - 1.0)
        model.value_bias = 0.0
    return model


def attach_value_head(model: MlpModel, seed: int) -> MlpModel:
    """Return a copy with a freshly initialized scalar head on the last hidden layer."""
    new = model.copy()
    fan_in = new.layer_dims[-2]
    bound = np.sqrt(6.0 / (fan_in + 1))
    u = uniform_block(derive_seed(seed, len(new.layer_dims)), fan_in)
    new.value_weight = bound * (2.0 * u - 1.0)
    new.value_bias = 0.0
    return new


def forward(model: MlpModel, features: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits (n x output_dim) and the per-layer activation cache for backward.

    cache[l] is the input to layer l (cache[0] is the feature matrix), so
    cache[-1] is the last hidden activation feeding the output layer.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(
            f"features shape {x.shape} incompatible with input dim {model.input_dim}"
        )
    cache = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        x = np.maximum(x @ w.T + b, 0.0)
        cache.append(x)
    logits = x @ model.weights[-1].T + model.biases[-1]
    return logits, cache


def value_forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Scalar V(x) per row from the value head; zeros when no head is attached."""
    logits_unused, cache = forward(model, features)
    if not model.has_value_head:
        return np.zeros(len(cache[0]))
    return cache[-1] @ model.value_weight + model.value_bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise max-shifted softmax; accepts a single vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains NaN/Inf")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log p[label]; rows must already be normalized."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape[0] != y.shape[0]:
        raise DimensionError("probs rows and labels length differ")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise NumericError("cross_entropy rows must sum to 1")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise IndexError(f"label out of range for {p.shape[1]} classes")
    picked = p[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(picked, EPS))))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """sum_a p(a) log(p(a)/q(a)) with q floored at EPS; 0 log 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence shapes differ: {p.shape} vs {q.shape}")
    for v in (p, q):
        if np.any(np.abs(v.sum(axis=-1) - 1.0) > 1e-6):
            raise NumericError("kl_divergence inputs must be normalized")
    ratio = np.log(np.maximum(p, EPS)) - np.log(np.maximum(q, EPS))
    return float(np.sum(np.where(p > 0.0, p * ratio, 0.0)))


def l2_distance_sq(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"l2_distance_sq lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def loss_value(model: MlpModel, batch: Batch, spec: LossSpec | None = None) -> float:
    """Scalar composite loss; the exact function backward() differentiates."""
    spec = spec or LossSpec()
    spec.validate(model, batch)
    logits, cache = forward(model, batch.features)
    probs = softmax(logits)
    total = cross_entropy(probs, batch.labels)
    if spec.kl_weight > 0:
        rows = np.asarray(spec.replay_rows)
        kl = [kl_divergence(spec.stored_probs[i], probs[r]) for i, r in enumerate(rows)]
        total += spec.kl_weight * float(np.mean(kl))
    if spec.value_weight > 0:
        rows = np.asarray(spec.replay_rows)
        values = cache[-1] @ model.value_weight + model.value_bias
        diff = values[rows] - np.asarray(spec.stored_values, dtype=np.float64)
        total += spec.value_weight * float(np.mean(diff * diff))
    return total


def backward(model: MlpModel, batch: Batch, spec: LossSpec | None = None) -> Gradients:
    """Analytic gradients of loss_value() w.r.t. every weight and bias."""
    spec = spec or LossSpec()
    spec.validate(model, batch)
    n = len(batch)
    logits, cache = forward(model, batch.features)
    probs = softmax(logits)
    if batch.labels.min() < 0 or batch.labels.max() >= model.output_dim:
        raise IndexError("label out of range for model output dim")

    # d loss / d logits: cross-entropy on all rows, KL cloning on replay rows
    dz = probs.copy()
    dz[np.arange(n), batch.labels] -= 1.0
    dz /= n
    if spec.kl_weight > 0:
        rows = np.asarray(spec.replay_rows)
        dz[rows] += spec.kl_weight * (probs[rows] - spec.stored_probs) / len(rows)

    d_weights = [np.zeros_like(w) for w in model.weights]
    d_biases = [np.zeros_like(b) for b in model.biases]
    d_value_weight = None
    d_value_bias = 0.0

    d_weights[-1] = dz.T @ cache[-1]
    d_biases[-1] = dz.sum(axis=0)
    da = dz @ model.weights[-1]

    if spec.value_weight > 0:
        rows = np.asarray(spec.replay_rows)
        values = cache[-1] @ model.value_weight + model.value_bias
        dv = np.zeros(n)
        dv[rows] = 2.0 * spec.value_weight * (
            values[rows] - np.asarray(spec.stored_values, dtype=np.float64)
        ) / len(rows)
        d_value_weight = cache[-1].T @ dv
        d_value_bias = float(dv.sum())
        da = da + np.outer(dv, model.value_weight)
    elif model.has_value_head:
        d_value_weight = np.zeros_like(model.value_weight)

    for layer in range(len(model.weights) - 2, -1, -1):
        dz = da * (cache[layer + 1] > 0.0)
        d_weights[layer] = dz.T @ cache[layer]
        d_biases[layer] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ model.weights[layer]
    return Gradients(d_weights, d_biases, d_value_weight, d_value_bias)


def sgd_step(model: MlpModel, grads: Gradients, lr: float) -> MlpModel:
    """p <- p - lr * g on every parameter; refuses non-finite gradients."""
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    for g in grads.d_weights + grads.d_biases:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient, step refused")
    if len(grads.d_weights) != len(model.weights):
        raise DimensionError("gradient layer count differs from model")
    new = model.copy()
    for i in range(len(new.weights)):
        if grads.d_weights[i].shape != new.weights[i].shape:
            raise DimensionError(f"gradient shape mismatch at layer {i}")
        new.weights[i] -= lr * grads.d_weights[i]
        new.biases[i] -= lr * grads.d_biases[i]
    if new.has_value_head and grads.d_value_weight is not None:
        if not np.all(np.isfinite(grads.d_value_weight)) or not np.isfinite(grads.d_value_bias):
            raise NumericError("non-finite value-head gradient, step refused")
        new.value_weight -= lr * grads.d_value_weight
        new.value_bias -= lr * grads.d_value_bias
    return new


def predict_probs(model: MlpModel, features: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, features)
    return softmax(logits)


def predict(model: MlpModel, features: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, features)
    return np.argmax(logits, axis=1)


# Wire blob: u32 LE dim count, each dim u32 LE, all weight matrices row-major
# f32 LE, then all bias vectors f32 LE. Shared with the fed-core protocol.

def serialize_model(model: MlpModel) -> bytes:
    out = bytearray()
    out += struct.pack("<I", len(model.layer_dims))
    for d in model.layer_dims:
        out += struct.pack("<I", d)
    for w in model.weights:
        out += np.ascontiguousarray(w, dtype=np.float32).tobytes()
    for b in model.biases:
        out += np.ascontiguousarray(b, dtype=np.float32).tobytes()
    return bytes(out)


def deserialize_model(blob: bytes) -> MlpModel:
    if len(blob) < 4:
        raise DimensionError("model blob too short")
    (ndims,) = struct.unpack_from("<I", blob, 0)
    if ndims < 2 or ndims > 64:
        raise DimensionError(f"implausible dim count {ndims} in model blob")
    need = 4 + 4 * ndims
    if len(blob) < need:
        raise DimensionError("model blob truncated in dim table")
    dims = list(struct.unpack_from(f"<{ndims}I", blob, 4))
    n_w = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    n_b = sum(dims[1:])
    expected = need + 4 * (n_w + n_b)
    if len(blob) != expected:
        raise DimensionError(f"model blob length {len(blob)} != expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=need).astype(np.float64)
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in).copy())
        pos += fan_out * fan_in
    for fan_out in dims[1:]:
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    return MlpModel(dims, weights, biases)


def round_to_f32(model: MlpModel) -> MlpModel:
    """Round every trunk parameter through float32, mirroring the wire boundary."""
    new = model.copy()
    new.weights = [w.astype(np.float32).astype(np.float64) for w in new.weights]
    new.biases = [b.astype(np.float32).astype(np.float64) for b in new.biases]
    return new
