"""Dense MLP engine: seeded init, forward, softmax, hand-written backprop, SGD.

Weight convention: ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i+1])``
and a layer computes ``a @ W + b`` on row-major batches (one sample per row).
Hidden layers use ReLU by default; the last layer is affine and its output
(the logits) goes straight into softmax.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "identity")


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MlpModel:
    """Parameter snapshot of a dense network.

    ``penultimate_activation`` controls the nonlinearity on the layer that
    feeds the final affine map; every earlier hidden layer is ReLU.
    """

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    penultimate_activation: str = "relu"

    def __post_init__(self):
        _check_dims(self.layer_dims)
        if self.penultimate_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.penultimate_activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and one bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(f"layer {i}: weight {w.shape}, bias {b.shape}, expected {expected}")

    @property
    def penultimate_dim(self) -> int:
        return self.layer_dims[-2]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def replace_parameters(self, params: Sequence[np.ndarray]) -> MlpModel:
        params = list(params)
        return MlpModel(
            self.layer_dims,
            tuple(_frozen(p) for p in params[0::2]),
            tuple(_frozen(p) for p in params[1::2]),
            self.penultimate_activation,
        )


@dataclass(frozen=True)
class Gradients:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _check_dims(layer_dims):
    if len(layer_dims) < 2:
        raise ConfigError(f"need at least 2 layer dims, got {list(layer_dims)}")
    for d in layer_dims:
        if int(d) != d or d < 1:
            raise ConfigError(f"layer dims must be positive integers, got {list(layer_dims)}")


def init_model(layer_dims: Sequence[int], seed: int, penultimate_activation: str = "relu") -> MlpModel:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    if layer_dims is None:
        raise ConfigError("layer dims missing")
    layer_dims = tuple(layer_dims)
    _check_dims(layer_dims)
    layer_dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(_frozen(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
        biases.append(_frozen(np.zeros(fan_out)))
    return MlpModel(layer_dims, tuple(weights), tuple(biases), penultimate_activation)


def _activate(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _hidden_kind(model, layer):
    return model.penultimate_activation if layer == len(model.weights) - 2 else "relu"


def forward(model: MlpModel, batch: np.ndarray):
    """Run the network on ``batch`` (samples x input dim).

    Returns ``(activations, logits)`` where ``activations[0]`` is the input
    and ``activations[-1]`` is the penultimate layer output.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"batch shape {x.shape} does not match input dim {model.layer_dims[0]}")
    activations = [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i == last:
            if not np.all(np.isfinite(z)):
                raise NumericError("forward pass produced non-finite logits")
            return activations, z
        a = _activate(z, _hidden_kind(model, i))
        activations.append(a)
    raise AssertionError("unreachable")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; works on vectors or batches."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax needs finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def backward(model: MlpModel, activations: Sequence[np.ndarray], dL_dlogits: np.ndarray) -> Gradients:
    """Backpropagate ``dL_dlogits`` through the network.

    Gradients are summed over the batch rows; if the loss is a batch mean
    the caller folds the ``1/N`` into ``dL_dlogits``.
    """
    delta = np.asarray(dL_dlogits, dtype=np.float64)
    n_layers = len(model.weights)
    if len(activations) != n_layers:
        raise ShapeError(f"expected {n_layers} activations, got {len(activations)}")
    expected = (activations[0].shape[0], model.n_classes)
    if delta.shape != expected:
        raise ShapeError(f"dL_dlogits shape {delta.shape}, expected {expected}")

    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        a_in = activations[i]
        grads_w[i] = a_in.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ model.weights[i].T
        if _hidden_kind(model, i - 1) == "relu":
            delta = delta * (a_in > 0)
    return Gradients(tuple(grads_w), tuple(grads_b))


def sgd_step(model: MlpModel, gradients: Gradients, learning_rate: float) -> MlpModel:
    """Return a new model with ``w - lr * g`` applied to every parameter."""
    if not learning_rate >= 0:
        raise ConfigError(f"learning rate must be non-negative, got {learning_rate}")
    params = model.parameters()
    grads = gradients.parameters()
    if len(params) != len(grads):
        raise ShapeError("gradient list does not match model parameters")
    updated = []
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.shape}")
        updated.append(p - learning_rate * g)
    return model.replace_parameters(updated)


# Checkpoint layout (all little-endian):
#   8 bytes  magic b"CHI2MLP\0"
#   u32      format version (1)
#   u32      penultimate activation (0 = relu, 1 = identity)
#   u32      number of layer dims L
#   u32 x L  layer dims
#   f64 ...  W0 (row-major), b0, W1, b1, ...
CHECKPOINT_MAGIC = b"CHI2MLP\0"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: MlpModel, path) -> Path:
    path = Path(path)
    header = CHECKPOINT_MAGIC + struct.pack(
        "<III", CHECKPOINT_VERSION, ACTIVATIONS.index(model.penultimate_activation), len(model.layer_dims)
    )
    header += struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    path.write_bytes(header + body)
    return path


def load_checkpoint(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, act, n_dims = struct.unpack_from("<III", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 20
    dims = struct.unpack_from(f"<{n_dims}I", raw, offset)
    offset += 4 * n_dims
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            if offset + 8 * count > len(raw):
                raise ValueError(f"{path}: truncated checkpoint")
            params.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape))
            offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return MlpModel(
        tuple(dims),
        tuple(_frozen(p) for p in params[0::2]),
        tuple(_frozen(p) for p in params[1::2]),
        ACTIVATIONS[act],
    )


def predict(model: MlpModel, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Class index per row; ties go to the lowest index (``np.argmax``)."""
    out = []
    for start in range(0, len(features), batch_size):
        _, logits = forward(model, features[start:start + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
