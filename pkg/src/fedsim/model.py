"""Dense feed-forward models with manual gradients and layer freezing.

The model family is intentionally small: fully connected layers with relu
hidden activations and a linear head trained under softmax cross-entropy.
That is the smallest family that still exposes what the simulator studies,
namely freezing a prefix of layers and training, uploading, and
aggregating only a contiguous output-side suffix.

All parameters are float64. Gradients are computed by hand (no autograd
dependency) and the backward pass stops at the freeze boundary, so frozen
layers cost a forward pass only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .rng import stream

ACTIVATIONS = ("relu", "identity", "softmax-head")

CHECKPOINT_MAGIC = "fedsim-model"


@dataclass
class Layer:
    """One dense layer: ``out = act(weights @ x + biases)``.

    weights has shape (out_dim, in_dim); biases has shape (out_dim,).
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValidationError("layer weights must be a 2-d array")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValidationError(
                f"bias shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output units"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation: {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NumericError("layer parameters must be finite")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def param_count(self) -> int:
        return self.weights.size + self.biases.size

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class LayeredModel:
    """An ordered stack of dense layers plus a global version counter.

    The version counts server aggregations applied to the parameters; a
    freshly initialized model has version 0.
    """

    layers: list[Layer]
    version: int = 0

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ValidationError(
                    f"layer input dim {nxt.in_dim} does not chain from "
                    f"previous output dim {prev.out_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax-head":
                raise ValidationError("softmax-head is only valid on the last layer")
        if self.version < 0:
            raise ValidationError("model version must be non-negative")

    @property
    def feature_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    @property
    def payload_bytes(self) -> int:
        # Wire format is float64, 8 bytes per parameter.
        return 8 * self.param_count

    def copy(self) -> "LayeredModel":
        return LayeredModel([layer.copy() for layer in self.layers], self.version)

    def params_equal(self, other: "LayeredModel") -> bool:
        """Bit-exact parameter comparison, version ignored."""
        if self.layer_count != other.layer_count:
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class FreezeMask:
    """Marks the contiguous output-side suffix of layers that trains.

    Layers with index >= trainable_suffix_start train; everything below is
    frozen and kept at its received values. Start 0 means full training.
    """

    trainable_suffix_start: int

    def __post_init__(self) -> None:
        if self.trainable_suffix_start < 0:
            raise ValidationError("trainable_suffix_start must be non-negative")

    def check(self, model: LayeredModel) -> None:
        # The last layer must always train, so start <= layer_count - 1.
        if self.trainable_suffix_start > model.layer_count - 1:
            raise ValidationError(
                f"trainable_suffix_start {self.trainable_suffix_start} leaves "
                f"no trainable layer in a {model.layer_count}-layer model"
            )

    def trainable_layers(self, model: LayeredModel) -> tuple[int, ...]:
        self.check(model)
        return tuple(range(self.trainable_suffix_start, model.layer_count))


FULL_MASK = FreezeMask(0)


def trainable_fraction(model: LayeredModel, mask: FreezeMask) -> float:
    """Parameter-count fraction of the model covered by the mask."""
    mask.check(model)
    trained = sum(model.layers[i].param_count for i in mask.trainable_layers(model))
    return trained / model.param_count


@dataclass
class ClientUpdate:
    """Parameter deltas from one completed local training task.

    layer_deltas maps layer index to (weight_delta, bias_delta) and covers
    exactly the contiguous trained suffix. origin_version is the model
    version the client started from.
    """

    layer_deltas: dict[int, tuple[np.ndarray, np.ndarray]]
    origin_version: int
    sample_count: int
    client_id: int
    arrival_time: float = math.nan

    def __post_init__(self) -> None:
        if self.sample_count <= 0:
            raise ValidationError("sample_count must be positive")
        if self.origin_version < 0:
            raise ValidationError("origin_version must be non-negative")
        idx = sorted(self.layer_deltas)
        if not idx:
            raise ValidationError("update must carry at least one layer delta")
        if idx != list(range(idx[0], idx[-1] + 1)):
            raise ValidationError("trained layers must form a contiguous suffix")

    @property
    def trained_layers(self) -> tuple[int, ...]:
        return tuple(sorted(self.layer_deltas))

    def scaled(self, factor: float) -> "ClientUpdate":
        """Return a copy with every delta multiplied by factor."""
        deltas = {
            i: (dw * factor, db * factor) for i, (dw, db) in self.layer_deltas.items()
        }
        return ClientUpdate(
            deltas, self.origin_version, self.sample_count, self.client_id,
            self.arrival_time,
        )


@dataclass
class ActivationCache:
    """Per-layer tensors saved by forward() for the backward pass."""

    inputs: list[np.ndarray]   # a_{i-1}: input to layer i
    preacts: list[np.ndarray]  # z_i: pre-activation of layer i
    logits: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]


def forward(model: LayeredModel, batch: np.ndarray) -> tuple[np.ndarray, ActivationCache]:
    """Run a batch through the model; returns (logits, cache).

    The softmax of the head is folded into the loss, so the returned
    logits are the last layer's affine output.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("batch must be a 2-d array (batch, features)")
    if x.shape[1] != model.feature_dim:
        raise ValidationError(
            f"batch feature dim {x.shape[1]} != model feature dim {model.feature_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("batch contains non-finite values")

    inputs: list[np.ndarray] = []
    preacts: list[np.ndarray] = []
    a = x
    for layer in model.layers:
        z = a @ layer.weights.T + layer.biases
        inputs.append(a)
        preacts.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, ActivationCache(inputs, preacts, a)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, natural log."""
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_z - picked))


def _check_labels(labels: np.ndarray, batch: int, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ValidationError(f"labels shape {labels.shape} != ({batch},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= class_count:
        raise ValidationError(f"labels must lie in [0, {class_count})")
    return labels


def backward_partial(
    model: LayeredModel,
    cache: ActivationCache,
    labels: np.ndarray,
    mask: FreezeMask,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Gradients of mean cross-entropy for the trainable suffix only.

    Returns {layer_index: (grad_weights, grad_biases)} for every index at
    or above the freeze boundary. Backpropagation stops at the boundary;
    no gradient is formed for frozen layers.
    """
    mask.check(model)
    batch = cache.batch_size
    labels = _check_labels(labels, batch, model.class_count)

    # d(mean CE)/d(logits) = (softmax - onehot) / batch
    delta = softmax(cache.logits)
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    start = mask.trainable_suffix_start
    for i in range(model.layer_count - 1, start - 1, -1):
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        if i > start:
            delta = delta @ model.layers[i].weights
            if model.layers[i - 1].activation == "relu":
                delta = delta * (cache.preacts[i - 1] > 0)
    return grads


def batch_count(sample_count: int, batch_size: int) -> int:
    """Number of batches in one epoch, remainder batch included."""
    if sample_count <= 0 or batch_size <= 0:
        raise ValidationError("sample_count and batch_size must be positive")
    return -(-sample_count // batch_size)


def local_train(
    model: LayeredModel,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    mask: FreezeMask,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    client_id: int = 0,
) -> ClientUpdate:
    """Run local SGD and return the resulting parameter deltas.

    Plain minibatch SGD on mean cross-entropy. Each epoch reshuffles the
    shard with rng, so the caller controls batch order by keying the
    generator. Frozen layers are never touched: their deltas are not part
    of the update and their local values stay bit-identical to the input
    model.
    """
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    if lr < 0:
        raise ValidationError("learning rate must be non-negative")
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty shard")

    work = model.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for b in range(batch_count(n, batch_size)):
            idx = order[b * batch_size : (b + 1) * batch_size]
            _, cache = forward(work, features[idx])
            grads = backward_partial(work, cache, labels[idx], mask)
            for i, (gw, gb) in grads.items():
                work.layers[i].weights -= lr * gw
                work.layers[i].biases -= lr * gb

    deltas = {
        i: (
            work.layers[i].weights - model.layers[i].weights,
            work.layers[i].biases - model.layers[i].biases,
        )
        for i in mask.trainable_layers(model)
    }
    return ClientUpdate(deltas, model.version, n, client_id)


def apply_update(
    model: LayeredModel, merged: dict[int, tuple[np.ndarray, np.ndarray]]
) -> LayeredModel:
    """Add merged deltas to the model; returns a new model, version + 1."""
    new = model.copy()
    for i, (dw, db) in merged.items():
        if not 0 <= i < model.layer_count:
            raise ValidationError(f"delta references layer {i} of {model.layer_count}")
        layer = new.layers[i]
        if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
            raise ValidationError(f"delta shape mismatch on layer {i}")
        layer.weights += dw
        layer.biases += db
    new.version = model.version + 1
    return new


def init_model(layer_dims: list[int] | tuple[int, ...], seed: int) -> LayeredModel:
    """Build a model with uniform init in [-sqrt(1/in_dim), +sqrt(1/in_dim)].

    Hidden layers are relu; the last layer is the softmax head. Same seed,
    same bits.
    """
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValidationError("layer_dims needs at least input and output sizes")
    if any(d < 1 for d in dims):
        raise ValidationError("layer dims must be positive")
    layers = []
    last = len(dims) - 2
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        g = stream(seed, client=i, rnd=0, purpose="init")
        bound = math.sqrt(1.0 / d_in)
        layers.append(
            Layer(
                g.uniform(-bound, bound, size=(d_out, d_in)),
                g.uniform(-bound, bound, size=d_out),
                "softmax-head" if i == last else "relu",
            )
        )
    return LayeredModel(layers)


def save_model(model: LayeredModel, path: str) -> None:
    """Write a text checkpoint: header, then per layer dims and row-major params."""
    lines = [f"{CHECKPOINT_MAGIC} 1", f"version {model.version}", f"layers {model.layer_count}"]
    for layer in model.layers:
        lines.append(f"layer {layer.out_dim} {layer.in_dim} {layer.activation}")
        lines.append(" ".join(repr(float(v)) for v in layer.weights.ravel()))
        lines.append(" ".join(repr(float(v)) for v in layer.biases))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> LayeredModel:
    """Read a checkpoint written by save_model. Round-trips bit-exactly."""
    from .errors import ParseError

    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    def fail(lineno: int, why: str) -> None:
        raise ParseError(f"{path}:{lineno + 1}: {why}")

    if not lines or lines[0].split() != [CHECKPOINT_MAGIC, "1"]:
        fail(0, "not a fedsim model checkpoint")
    try:
        version = int(lines[1].split()[1])
        count = int(lines[2].split()[1])
    except (IndexError, ValueError):
        fail(1, "bad checkpoint header")
    layers = []
    at = 3
    for _ in range(count):
        try:
            _, out_s, in_s, act = lines[at].split()
            d_out, d_in = int(out_s), int(in_s)
        except (IndexError, ValueError):
            fail(at, "bad layer header")
        try:
            w = np.array([float(v) for v in lines[at + 1].split()], dtype=np.float64)
            b = np.array([float(v) for v in lines[at + 2].split()], dtype=np.float64)
        except (IndexError, ValueError):
            fail(at + 1, "bad parameter row")
        if w.size != d_out * d_in or b.size != d_out:
            fail(at + 1, f"expected {d_out}x{d_in} weights and {d_out} biases")
        layers.append(Layer(w.reshape(d_out, d_in), b, act))
        at += 3
    return LayeredModel(layers, version)
