"""Atlas-guided training of a reduced-modality head.

A model that only sees the weaker feature view is trained with a composite
loss: the usual output MSE, plus a term that pulls each sample's latent
vector toward the nearest atlas centroid of its own class. The atlas comes
from the full-modality model and is frozen; only the reduced model learns.

For sample j and centroid i, ``G(i, j)`` is the squared distance between
centroid i and the sample's latent. Passing the k distances of a sample
through a softmax and subtracting from one turns them into soft "closeness"
scores: the assigned centroid (one-hot targets z) should score 1, all
others lower. The attraction loss is the mean squared gap between the
scores and the targets, and the training objective is
``eta * mse + (1 - eta) * attraction`` with ``eta`` in [0, 1].

Assignment targets are recomputed once per epoch from the current latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import CentroidAtlas, squared_distances
from .data_io import Dataset
from .dense_head import (
    DenseHead,
    LatentSet,
    TrainReport,
    _backprop,
    _check_input,
    _forward_batch,
    accuracy,
    extract_latents,
    flatten_params,
    max_relative_error,
    mse_loss,
    set_params,
    sgd_loop,
)
from .errors import DimensionMismatch, NoEligibleCentroid, NonFiniteLoss


@dataclass
class AdaptConfig:
    """Mixing weight, frozen atlas, and training hyperparameters."""

    eta: float
    atlas: CentroidAtlas
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    class_constrained: bool = True

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid training hyperparameters")


def compute_z(atlas: CentroidAtlas, latents: LatentSet, class_constrained: bool = True) -> np.ndarray:
    """One-hot nearest-centroid targets, shape (k, n).

    Column j holds a single 1 at the centroid nearest to latent j; with
    ``class_constrained`` only centroids sharing the sample's label are
    eligible. Ties go to the lowest index.
    """
    if latents.dim != atlas.dim:
        raise DimensionMismatch(f"latent dim {latents.dim} != atlas dim {atlas.dim}")
    dist = squared_distances(latents.vectors, atlas.centroids)
    if class_constrained:
        ineligible = atlas.class_labels[None, :] != latents.labels[:, None]
        if np.any(ineligible.all(axis=1)):
            j = int(np.argmax(ineligible.all(axis=1)))
            raise NoEligibleCentroid(
                f"no centroid carries class {int(latents.labels[j])} needed by sample {j}"
            )
        dist = np.where(ineligible, np.inf, dist)
    choice = dist.argmin(axis=1)
    z = np.zeros((atlas.k, len(latents)), dtype=np.int64)
    z[choice, np.arange(len(latents))] = 1
    return z


def _softmax_rows(G: np.ndarray) -> np.ndarray:
    shifted = G - G.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_z(z: np.ndarray, k: int, n: int) -> np.ndarray:
    z = np.asarray(z)
    if z.shape != (k, n):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({k}, {n})")
    if not np.array_equal(z.sum(axis=0), np.ones(n, dtype=z.dtype)):
        raise ValueError("every z column must sum to exactly 1")
    return z


def loss_e2(atlas: CentroidAtlas, latents: LatentSet, z: np.ndarray) -> float:
    """Centroid-attraction loss over n latents and k centroids."""
    if latents.dim != atlas.dim:
        raise DimensionMismatch(f"latent dim {latents.dim} != atlas dim {atlas.dim}")
    z = _check_z(z, atlas.k, len(latents))
    G = squared_distances(latents.vectors, atlas.centroids)
    f = _softmax_rows(G)
    err = z.T - (1.0 - f)
    return float((err**2).sum() / (atlas.k * len(latents)))


def _e2_latent_grads(centroids: np.ndarray, R: np.ndarray, z_cols: np.ndarray) -> np.ndarray:
    """d loss_e2 / d latents for one batch: (B, l)."""
    B, k = R.shape[0], centroids.shape[0]
    G = squared_distances(R, centroids)
    f = _softmax_rows(G)
    a = 2.0 * (z_cols.T - 1.0 + f) / (k * B)
    s = f * (a - (a * f).sum(axis=1, keepdims=True))
    return 2.0 * (s.sum(axis=1, keepdims=True) * R - s @ centroids)


def _combined_batch_grads(model: DenseHead, Xb: np.ndarray, tb: np.ndarray,
                          z_cols: np.ndarray, eta: float, centroids: np.ndarray):
    """Gradients of eta * batch MSE + (1 - eta) * batch attraction loss.

    At eta = 1 this follows exactly the same floating-point path as the
    plain MSE gradients, so adapted training with eta = 1 is weight-for-
    weight identical to train_mse.
    """
    zs, acts, y = _forward_batch(model, Xb)
    dy = eta * (2.0 * (y - tb) / len(tb))
    dlatent = None
    if eta < 1.0:
        dlatent = (1.0 - eta) * _e2_latent_grads(centroids, acts[-1], z_cols)
    return _backprop(model, zs, acts, y, dy, dlatent)


def train_adapted(model: DenseHead, data: Dataset, config: AdaptConfig) -> TrainReport:
    """Mini-batch descent on the composite loss, in place.

    Assignment targets are refreshed from the current latents at the start
    of every epoch. The report carries the combined loss per epoch along
    with its two components, all evaluated on the full dataset; entry 0 is
    the pre-training state.
    """
    if len(data) == 0:
        raise DimensionMismatch("dataset is empty")
    atlas = config.atlas
    if atlas.dim != model.latent_dim:
        raise DimensionMismatch(
            f"atlas latent dim {atlas.dim} != model latent dim {model.latent_dim}"
        )
    X = _check_input(model, data.features)
    targets = data.labels.astype(np.float64)
    eta = float(config.eta)

    state = {"z": compute_z(atlas, extract_latents(model, data), config.class_constrained)}
    e_new_list: list[float] = []
    e1_list: list[float] = []
    e2_list: list[float] = []

    def refresh_z(_epoch: int) -> None:
        state["z"] = compute_z(atlas, extract_latents(model, data), config.class_constrained)

    def record() -> None:
        e1 = mse_loss(model, X, targets)
        e2 = loss_e2(atlas, extract_latents(model, data), state["z"])
        e_new = eta * e1 + (1.0 - eta) * e2
        if not np.isfinite(e_new):
            raise NonFiniteLoss(f"combined loss became {e_new} after epoch {len(e_new_list) - 1}")
        e1_list.append(e1)
        e2_list.append(e2)
        e_new_list.append(e_new)

    sgd_loop(
        model, X,
        epochs=config.epochs, batch_size=config.batch_size,
        learning_rate=config.learning_rate, seed=config.seed,
        batch_grads=lambda m, idx: _combined_batch_grads(
            m, X[idx], targets[idx], state["z"][:, idx], eta, atlas.centroids
        ),
        epoch_begin=refresh_z,
        epoch_losses=record,
    )
    return TrainReport(
        epoch_losses=e_new_list,
        final_accuracy=accuracy(model, data),
        epoch_e1=e1_list,
        epoch_e2=e2_list,
    )


def adapt_loss(model: DenseHead, data: Dataset, config: AdaptConfig, z: np.ndarray) -> float:
    """Composite loss at fixed assignment targets."""
    e1 = mse_loss(model, data.features, data.labels.astype(np.float64))
    e2 = loss_e2(config.atlas, extract_latents(model, data), z)
    return float(config.eta) * e1 + (1.0 - float(config.eta)) * e2


def grad_check_adapt(model: DenseHead, data: Dataset, config: AdaptConfig,
                     eps: float = 1e-5) -> float:
    """Max relative error of the composite-loss gradient at fixed targets.

    Same comparison rule as :func:`latent_atlas.dense_head.grad_check`.
    """
    if not (0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    X = _check_input(model, data.features)
    targets = data.labels.astype(np.float64)
    z = compute_z(config.atlas, extract_latents(model, data), config.class_constrained)
    grads_w, grads_b = _combined_batch_grads(
        model, X, targets, z, float(config.eta), config.atlas.centroids
    )
    analytic = np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
    )
    theta = flatten_params(model)
    probe = model.copy()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = eps
        set_params(probe, theta + bump)
        up = adapt_loss(probe, data, config, z)
        set_params(probe, theta - bump)
        down = adapt_loss(probe, data, config, z)
        numeric[i] = (up - down) / (2.0 * eps)
    return max_relative_error(analytic, numeric)
