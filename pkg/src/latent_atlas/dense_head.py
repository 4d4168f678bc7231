"""Fully-connected prediction head with latent-variable extraction.

The head maps a precomputed backbone feature vector through ReLU hidden
layers to a single sigmoid output. The activations of the last hidden layer
are the latent representation everything downstream (clustering, retraining,
domain adaptation) is built on; its dimension is the last entry of
``hidden_dims``.

Training is plain mini-batch gradient descent on the mean squared error
between sigmoid outputs and 0/1 targets. All randomness (initialization,
batch shuffling) derives from the config seed through the package seeding
scheme, so runs are exactly reproducible.

Model files are JSON: ``{"format": "latent-atlas/head v1", "config": {...},
"layers": [{"weights": [[...]], "biases": [...]}, ...]}`` with weight rows
listed in row-major order (one inner list per output unit) and floats
printed via ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import Dataset
from .errors import DimensionMismatch, NonFiniteLoss
from .parallel import map_row_blocks
from .seeding import STREAM_INIT, STREAM_TRAIN, stream_rng

HEAD_FORMAT = "latent-atlas/head v1"


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class HeadConfig:
    """Layer sizes and training hyperparameters.

    ``hidden_dims`` must be non-empty; its last entry is the latent
    dimension. ``epochs = 0`` is allowed and makes training a no-op.
    """

    input_dim: int
    hidden_dims: list[int]
    seed: int = 0
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 32

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be non-empty positive ints, got {self.hidden_dims}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def latent_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass
class LatentSet:
    """Last-hidden-layer vectors with their labels and subject ids."""

    vectors: np.ndarray
    labels: np.ndarray
    subject_ids: list[str]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.vectors) == len(self.labels) == len(self.subject_ids)):
            raise DimensionMismatch(
                f"parallel lists disagree: {len(self.vectors)} vectors, "
                f"{len(self.labels)} labels, {len(self.subject_ids)} subject ids"
            )

    def __len__(self) -> int:
        return len(self.subject_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class TrainReport:
    """Per-epoch loss trace. ``epoch_losses[0]`` is the pre-training loss.

    For adapted training the component losses are recorded alongside the
    combined one; for plain MSE training they are None.
    """

    epoch_losses: list[float]
    final_accuracy: float
    epoch_e1: list[float] | None = None
    epoch_e2: list[float] | None = None

    @property
    def initial_loss(self) -> float:
        return self.epoch_losses[0]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]

    def to_dict(self) -> dict:
        out = {
            "epoch_losses": [float(x) for x in self.epoch_losses],
            "initial_loss": float(self.initial_loss),
            "final_loss": float(self.final_loss),
            "final_accuracy": float(self.final_accuracy),
        }
        if self.epoch_e1 is not None:
            out["epoch_e1"] = [float(x) for x in self.epoch_e1]
        if self.epoch_e2 is not None:
            out["epoch_e2"] = [float(x) for x in self.epoch_e2]
        return out


class DenseHead:
    """ReLU hidden layers plus one sigmoid output unit.

    ``weights[i]`` has shape (fan_out, fan_in); the final layer has a single
    output row. Weights start uniform in +-sqrt(6 / (fan_in + fan_out)),
    biases at zero, drawn from the init stream of the config seed.
    """

    def __init__(self, config: HeadConfig):
        self.config = config
        rng = stream_rng(config.seed, STREAM_INIT)
        dims = [config.input_dim] + list(config.hidden_dims) + [1]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def n_hidden_layers(self) -> int:
        return len(self.config.hidden_dims)

    def copy(self) -> "DenseHead":
        dup = DenseHead.__new__(DenseHead)
        dup.config = self.config
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _check_input(model: DenseHead, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.input_dim:
        raise DimensionMismatch(
            f"input dimension {X.shape[-1]} != model input_dim {model.input_dim}"
        )
    return X


def _forward_batch(model: DenseHead, X: np.ndarray):
    """Returns (pre_activations, activations, y). activations[0] is X."""
    zs = []
    acts = [X]
    a = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ W.T + b
        a = np.maximum(z, 0.0)
        zs.append(z)
        acts.append(a)
    z_out = a @ model.weights[-1].T + model.biases[-1]
    zs.append(z_out)
    y = sigmoid(z_out[:, 0])
    return zs, acts, y


def forward(model: DenseHead, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Single-sample forward pass: (sigmoid output, latent vector).

    The latent vector is the post-ReLU activation of the last hidden layer.
    """
    x = _check_input(model, x)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a single 1-D input, got shape {x.shape}")
    _, acts, y = _forward_batch(model, x[None, :])
    return float(y[0]), acts[-1][0].copy()


def predict(model: DenseHead, X: np.ndarray) -> np.ndarray:
    """Batch of sigmoid outputs, shape (n,)."""
    X = _check_input(model, X)
    return map_row_blocks(lambda B: _forward_batch(model, B)[2], X)


def latent_matrix(model: DenseHead, X: np.ndarray) -> np.ndarray:
    """Batch of latent vectors, shape (n, latent_dim)."""
    X = _check_input(model, X)
    return map_row_blocks(lambda B: _forward_batch(model, B)[1][-1], X)


def extract_latents(model: DenseHead, data: Dataset) -> LatentSet:
    """One latent vector per sample, order-preserving."""
    if len(data) == 0:
        return LatentSet(np.zeros((0, model.latent_dim)), np.zeros(0, dtype=np.int64), [])
    return LatentSet(
        vectors=latent_matrix(model, data.features),
        labels=data.labels.copy(),
        subject_ids=list(data.subject_ids),
    )


def accuracy(model: DenseHead, data: Dataset) -> float:
    """Fraction of samples whose thresholded output matches the label."""
    y = predict(model, data.features)
    return float(np.mean((y >= 0.5).astype(np.int64) == data.labels))


def mse_loss(model: DenseHead, X: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error of the sigmoid outputs against targets."""
    _, _, y = _forward_batch(model, _check_input(model, X))
    return float(np.mean((targets - y) ** 2))


def _backprop(model: DenseHead, zs, acts, y: np.ndarray, dy: np.ndarray,
              dlatent: np.ndarray | None = None):
    """Gradients of a scalar loss given dLoss/dy (and optionally dLoss/dlatent).

    ``dy`` has shape (batch,); ``dlatent`` (batch, latent_dim) is injected at
    the last hidden layer, where losses defined directly on the latent
    vectors enter the chain.
    """
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    dz = (dy * y * (1.0 - y))[:, None]
    grads_w[-1] = dz.T @ acts[-1]
    grads_b[-1] = dz.sum(axis=0)
    da = dz @ model.weights[-1]
    if dlatent is not None:
        da = da + dlatent
    for i in range(len(model.weights) - 2, -1, -1):
        dz = da * (zs[i] > 0)
        grads_w[i] = dz.T @ acts[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ model.weights[i]
    return grads_w, grads_b


def mse_batch_grads(model: DenseHead, Xb: np.ndarray, tb: np.ndarray):
    """Gradients of the batch-mean squared error."""
    zs, acts, y = _forward_batch(model, Xb)
    dy = 2.0 * (y - tb) / len(tb)
    return _backprop(model, zs, acts, y, dy)


def sgd_loop(model: DenseHead, X: np.ndarray, epochs: int, batch_size: int,
             learning_rate: float, seed: int, batch_grads, epoch_begin=None,
             epoch_losses=None) -> None:
    """Shared mini-batch descent driver.

    ``batch_grads(model, idx)`` returns (grads_w, grads_b) for the index
    batch; ``epoch_begin(epoch)`` runs before each epoch (target refresh);
    ``epoch_losses()`` is evaluated before training and after every epoch and
    must append to its own records, raising NonFiniteLoss on divergence.
    """
    rng = stream_rng(seed, STREAM_TRAIN)
    n = X.shape[0]
    if epoch_losses is not None:
        epoch_losses()
    for epoch in range(epochs):
        if epoch_begin is not None:
            epoch_begin(epoch)
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            grads_w, grads_b = batch_grads(model, idx)
            for W, b, gw, gb in zip(model.weights, model.biases, grads_w, grads_b):
                W -= learning_rate * gw
                b -= learning_rate * gb
        if epoch_losses is not None:
            epoch_losses()


def train_mse(model: DenseHead, data: Dataset) -> TrainReport:
    """Mini-batch gradient descent on the output MSE, in place.

    Deterministic for a fixed config seed; raises NonFiniteLoss if the loss
    diverges. With ``epochs = 0`` the weights are untouched and the report
    carries the initial loss only.
    """
    if len(data) == 0:
        raise DimensionMismatch("dataset is empty")
    X = _check_input(model, data.features)
    targets = data.labels.astype(np.float64)
    cfg = model.config
    losses: list[float] = []

    def record():
        loss = mse_loss(model, X, targets)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} after epoch {len(losses) - 1}")
        losses.append(loss)

    sgd_loop(
        model, X,
        epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, seed=cfg.seed,
        batch_grads=lambda m, idx: mse_batch_grads(m, X[idx], targets[idx]),
        epoch_losses=record,
    )
    return TrainReport(epoch_losses=losses, final_accuracy=accuracy(model, data))


# ---------------------------------------------------------------------------
# Parameter flattening (shared with the retraining linear system)
# ---------------------------------------------------------------------------

def flatten_params(model: DenseHead) -> np.ndarray:
    """All weights and biases as one vector, layer by layer, row-major
    weights then biases within each layer."""
    parts = []
    for W, b in zip(model.weights, model.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def set_params(model: DenseHead, theta: np.ndarray) -> None:
    """Inverse of :func:`flatten_params`, in place."""
    if theta.shape[0] != model.n_params():
        raise DimensionMismatch(
            f"parameter vector has {theta.shape[0]} entries, model needs {model.n_params()}"
        )
    pos = 0
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        model.weights[i] = theta[pos : pos + W.size].reshape(W.shape).copy()
        pos += W.size
        model.biases[i] = theta[pos : pos + b.size].copy()
        pos += b.size


def grad_check(model: DenseHead, data: Dataset, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks the full-dataset MSE gradient for every weight and bias. Where
    both gradients are below 1e-6 the comparison falls back to the absolute
    difference (zero when it is within 1e-8), so dead units do not produce
    0/0 noise.
    """
    if not (0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    X = _check_input(model, data.features)
    targets = data.labels.astype(np.float64)
    grads_w, grads_b = mse_batch_grads(model, X, targets)
    probe = model.copy()
    analytic = np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
    )
    theta = flatten_params(model)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = eps
        set_params(probe, theta + bump)
        up = mse_loss(probe, X, targets)
        set_params(probe, theta - bump)
        down = mse_loss(probe, X, targets)
        numeric[i] = (up - down) / (2.0 * eps)
    return max_relative_error(analytic, numeric)


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise |a-b| / (|a|+|b|), with the tiny-gradient fallback
    described in :func:`grad_check`."""
    diff = np.abs(a - b)
    denom = np.abs(a) + np.abs(b)
    small = denom < 1e-6
    err = np.where(small, np.where(diff <= 1e-8, 0.0, diff), diff / np.where(small, 1.0, denom))
    return float(err.max()) if err.size else 0.0


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_head(model: DenseHead, path: str | Path) -> None:
    doc = {
        "format": HEAD_FORMAT,
        "config": {
            "input_dim": model.config.input_dim,
            "hidden_dims": list(model.config.hidden_dims),
            "seed": model.config.seed,
            "learning_rate": model.config.learning_rate,
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
        },
        "layers": [
            {"weights": [[float(x) for x in row] for row in W], "biases": [float(x) for x in b]}
            for W, b in zip(model.weights, model.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_head(path: str | Path) -> DenseHead:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != HEAD_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    model = DenseHead(HeadConfig(**doc["config"]))
    layers = doc["layers"]
    if len(layers) != len(model.weights):
        raise DimensionMismatch(f"model file has {len(layers)} layers, config implies {len(model.weights)}")
    for i, layer in enumerate(layers):
        W = np.array(layer["weights"], dtype=np.float64)
        b = np.array(layer["biases"], dtype=np.float64)
        if W.shape != model.weights[i].shape or b.shape != model.biases[i].shape:
            raise DimensionMismatch(f"layer {i} shape {W.shape} does not match config")
        model.weights[i] = W
        model.biases[i] = b
    return model
