"""Constraint-preserving retraining via linearized minimum-norm updates.

New data must be learned exactly (the updated outputs pinned to their
targets) while the behaviour encoded in the centroid atlas survives. The
update hypothesis is that a small weight increment suffices, so the change
of each pinned output is linearized in the increment: one constraint row per
sample, ``v(j) = d(j) - y(j)``, with the row holding the output's gradient
against every retrainable weight and bias. The minimum-norm solution of
that wide system is the smallest weight modification that satisfies the
constraints to first order; a gradient-projection pass then slides it along
the constraint subspace to reduce the (linearized) error on the old data,
weighted by ``lambda``.

Because the first-order step leaves a curvature residual on the true
forward pass, the solve re-linearizes and repeats until the true outputs
meet the tolerance. Each pass is itself a minimum-norm increment, so the
composition stays a minimal modification of the original weights.

Targets are clamped away from the sigmoid rails (0/1 -> clamp/1-clamp,
default 0.02) before forming residuals; exact 0/1 would demand unbounded
pre-activations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .atlas import AssignmentReport, CentroidAtlas, assign_nearest, exemplar_row
from .data_io import Dataset
from .dense_head import (
    DenseHead,
    _check_input,
    _forward_batch,
    accuracy,
    extract_latents,
    flatten_params,
    predict,
    set_params,
    train_mse,
)
from .errors import DimensionMismatch, LinearizationBreakdown, ModelNotTrained
from .numerics import gradient_projection, least_norm_solve
from .parallel import map_row_blocks

DEFAULT_CLAMP = 0.02
BREAKDOWN_RESIDUAL = 0.25


@dataclass
class RetrainProblem:
    """Frozen base model, the new samples to pin, and the old-data context.

    ``centroid_exemplars`` are the training inputs whose latents sit nearest
    each atlas centroid; pinning their outputs alongside the new data is
    what preserves the atlas annotations. The augmented constraint count is
    always ``len(new_data) + len(centroid_exemplars)``.
    """

    base_model: DenseHead
    new_data: Dataset
    centroid_exemplars: Dataset
    lam: float = 1.0
    old_data: Dataset | None = None
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not (0 < self.clamp < 0.5):
            raise ValueError(f"clamp must be in (0, 0.5), got {self.clamp}")
        if len(self.new_data) + len(self.centroid_exemplars) < 1:
            raise DimensionMismatch("no constraint samples (new data and exemplars both empty)")
        dim = self.base_model.input_dim
        for ds, name in ((self.new_data, "new_data"), (self.centroid_exemplars, "exemplars")):
            if len(ds) and ds.dim != dim:
                raise DimensionMismatch(f"{name} dimension {ds.dim} != model input_dim {dim}")
        if self.old_data is not None and len(self.old_data) and self.old_data.dim != dim:
            raise DimensionMismatch(f"old_data dimension {self.old_data.dim} != model input_dim {dim}")

    @property
    def augmented_size(self) -> int:
        return len(self.new_data) + len(self.centroid_exemplars)

    def constraint_features(self) -> np.ndarray:
        parts = []
        if len(self.new_data):
            parts.append(self.new_data.features)
        if len(self.centroid_exemplars):
            parts.append(self.centroid_exemplars.features)
        return np.vstack(parts)

    def constraint_targets(self) -> np.ndarray:
        labels = np.concatenate([self.new_data.labels, self.centroid_exemplars.labels])
        return clamp_targets(labels, self.clamp)


@dataclass
class RetrainResult:
    """Updated model plus the update diagnostics.

    ``centroid_drift[i]`` is the distance between exemplar i's latent under
    the updated model and centroid i; ``exemplar_movement[i]`` isolates the
    part caused by retraining (distance between the exemplar's updated and
    base latents), which is exactly zero for a zero update.
    """

    updated_model: DenseHead
    delta_norm: float
    constraint_residual: float
    old_accuracy_before: float
    old_accuracy_after: float
    new_accuracy: float
    centroid_drift: list[float]
    exemplar_movement: list[float]

    def to_dict(self) -> dict:
        return {
            "delta_norm": float(self.delta_norm),
            "constraint_residual": float(self.constraint_residual),
            "old_accuracy_before": float(self.old_accuracy_before),
            "old_accuracy_after": float(self.old_accuracy_after),
            "new_accuracy": float(self.new_accuracy),
            "centroid_drift": [float(d) for d in self.centroid_drift],
            "exemplar_movement": [float(d) for d in self.exemplar_movement],
        }


def clamp_targets(labels: np.ndarray, clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    """Map 0/1 labels to clamp/1-clamp sigmoid-reachable targets."""
    return np.where(np.asarray(labels) > 0, 1.0 - clamp, clamp)


def output_jacobian(model: DenseHead, X: np.ndarray) -> np.ndarray:
    """Per-sample gradients of the sigmoid output against all parameters.

    Row j is d y(x_j) / d theta with theta flattened in
    :func:`latent_atlas.dense_head.flatten_params` order (layer by layer,
    row-major weights then biases).
    """
    X = _check_input(model, X)

    def block(Xb: np.ndarray) -> np.ndarray:
        zs, acts, y = _forward_batch(model, Xb)
        n_layers = len(model.weights)
        pieces: list[np.ndarray] = [None] * (2 * n_layers)
        dz = (y * (1.0 - y))[:, None]
        pieces[2 * (n_layers - 1)] = dz * acts[-1]
        pieces[2 * (n_layers - 1) + 1] = dz
        da = dz @ model.weights[-1]
        for i in range(n_layers - 2, -1, -1):
            dz = da * (zs[i] > 0)
            pieces[2 * i] = np.einsum("bo,bi->boi", dz, acts[i]).reshape(len(Xb), -1)
            pieces[2 * i + 1] = dz
            if i > 0:
                da = dz @ model.weights[i]
        return np.concatenate(pieces, axis=1)

    return map_row_blocks(block, X)


def build_linear_system(problem: RetrainProblem) -> tuple[np.ndarray, np.ndarray]:
    """Constraint system (V, v) for the augmented sample set.

    ``v = targets - base outputs`` and ``V`` is the output Jacobian of the
    base model, one row per augmented sample, one column per retrainable
    weight or bias.
    """
    if all(np.all(w == 0) for w in problem.base_model.weights):
        warnings.warn("base model weights are all zero; was it trained?", ModelNotTrained)
    X = problem.constraint_features()
    v = problem.constraint_targets() - predict(problem.base_model, X)
    V = output_jacobian(problem.base_model, X)
    return V, v


def solve_retrain(
    problem: RetrainProblem,
    tol: float = 0.05,
    max_iter: int = 50,
    refine_steps: int = 30,
    solver_tol: float = 1e-6,
    atlas: CentroidAtlas | None = None,
) -> RetrainResult:
    """Compute the minimal weight update that pins the augmented outputs.

    Repeats (linearize at the current weights, minimum-norm solve, apply)
    until the true forward pass holds every constraint output within ``tol``
    of its clamped target, at most ``refine_steps`` times; if the
    constraints already hold, the update is exactly zero. On the first pass
    the increment is refined by up to ``max_iter`` gradient-projection steps
    that reduce ``lambda`` times the linearized old-data error without
    leaving the constraint subspace.

    Raises LinearizationBreakdown when the final residual exceeds 0.25,
    the signal that the small-increment hypothesis failed (reduce the new
    batch or pre-fine-tune). When ``atlas`` is given, per-centroid drift of
    the exemplar latents is reported.
    """
    base = problem.base_model
    X = problem.constraint_features()
    targets = problem.constraint_targets()
    old = problem.old_data
    old_acc_before = accuracy(base, old) if old is not None and len(old) else 0.0

    model = base.copy()
    for outer in range(refine_steps):
        residual = targets - predict(model, X)
        res_norm = float(np.linalg.norm(residual))
        if np.abs(residual).max() <= tol:
            break
        V = output_jacobian(model, X)
        # Solve only for violated rows. Satisfied rows stay monitored and
        # rejoin if a later increment drags them out of tolerance; solving
        # for them is harmful, not just wasteful: a saturated output has a
        # nearly zero gradient row, and pinning its half-clamp residual
        # costs an increment of norm ~ residual / ||row||. Rows with a
        # numerically zero gradient cannot move at first order at all and
        # are likewise excluded; the final true-forward check covers every
        # sample regardless.
        row_norms = np.linalg.norm(V, axis=1)
        keep = (np.abs(residual) > tol) & (row_norms > 1e-9 * row_norms.max())
        if not keep.any():
            break
        increment = least_norm_solve(V[keep], residual[keep], solver_tol)
        if outer == 0 and problem.lam > 0 and old is not None and len(old):
            increment = _refine_on_old_data(problem, V[keep], residual[keep], increment, max_iter)
        # The increment solves the linearized system exactly, which makes it
        # a descent direction for the true residual norm; damp it until the
        # residual actually decreases so the update cannot overshoot.
        theta = flatten_params(model)
        alpha = 1.0
        for _ in range(25):
            set_params(model, theta + alpha * increment)
            trial_norm = float(np.linalg.norm(targets - predict(model, X)))
            if trial_norm < res_norm:
                break
            alpha *= 0.5
        else:
            set_params(model, theta)
            break

    final_residual = float(np.abs(targets - predict(model, X)).max())
    if final_residual > BREAKDOWN_RESIDUAL:
        raise LinearizationBreakdown(
            f"constraint residual {final_residual:.3f} exceeds {BREAKDOWN_RESIDUAL}; "
            "the weight increment is too large for the first-order hypothesis"
        )

    drift: list[float] = []
    movement: list[float] = []
    if atlas is not None and len(problem.centroid_exemplars):
        updated_latents = extract_latents(model, problem.centroid_exemplars).vectors
        base_latents = extract_latents(base, problem.centroid_exemplars).vectors
        for i in range(min(atlas.k, len(problem.centroid_exemplars))):
            drift.append(float(np.linalg.norm(updated_latents[i] - atlas.centroids[i])))
            movement.append(float(np.linalg.norm(updated_latents[i] - base_latents[i])))

    return RetrainResult(
        updated_model=model,
        delta_norm=float(np.linalg.norm(flatten_params(model) - flatten_params(base))),
        constraint_residual=final_residual,
        old_accuracy_before=old_acc_before,
        old_accuracy_after=accuracy(model, old) if old is not None and len(old) else 0.0,
        new_accuracy=accuracy(model, problem.new_data) if len(problem.new_data) else 1.0,
        centroid_drift=drift,
        exemplar_movement=movement,
    )


def _refine_on_old_data(problem: RetrainProblem, V: np.ndarray, v: np.ndarray,
                        x0: np.ndarray, max_iter: int) -> np.ndarray:
    """Slide the increment along {V x = v} to reduce the old-data MSE.

    The descent itself runs on the linearized old-data error (a quadratic),
    but the linearization is only trusted near x0: the null-space correction
    it proposes is backtracked against the TRUE forward-pass error on the
    old data and discarded entirely if it does not help.
    """
    old = problem.old_data
    base = problem.base_model
    V_old = output_jacobian(base, old.features)
    old_targets = clamp_targets(old.labels, problem.clamp)
    r0 = predict(base, old.features) - old_targets
    scale = problem.lam * 2.0 / len(old)

    def objective(x: np.ndarray) -> float:
        r = V_old @ x + r0
        return problem.lam * float(r @ r) / len(old)

    def objective_grad(x: np.ndarray) -> np.ndarray:
        return scale * (V_old.T @ (V_old @ x + r0))

    # 1/L step for the quadratic: guaranteed descent, no tuning knob.
    lipschitz = scale * np.linalg.norm(V_old, 2) ** 2
    if lipschitz <= 0:
        return x0
    result = gradient_projection(
        objective_grad, (V, v), x0,
        step=1.0 / lipschitz, max_iter=max_iter, tol=1e-9,
        objective=objective,
    )

    def true_old_mse(x: np.ndarray) -> float:
        probe = base.copy()
        set_params(probe, flatten_params(probe) + x)
        return float(np.mean((predict(probe, old.features) - old_targets) ** 2))

    baseline = true_old_mse(x0)
    correction = result.x - x0
    alpha = 1.0
    for _ in range(10):
        if true_old_mse(x0 + alpha * correction) < baseline:
            return x0 + alpha * correction
        alpha *= 0.5
    return x0


def evaluate_drift(result: RetrainResult, atlas: CentroidAtlas, test: Dataset) -> AssignmentReport:
    """Assign the updated model's latents to the ORIGINAL atlas.

    This is the after-retraining counterpart of the per-subject assignment
    table: unchanged weights reproduce the before table exactly.
    """
    latents = extract_latents(result.updated_model, test)
    _, report = assign_nearest(atlas, latents)
    return report


def exemplars_from_atlas(atlas: CentroidAtlas, clustered_data: Dataset) -> Dataset:
    """Recover the k exemplar samples recorded in the atlas.

    ``clustered_data`` must be the dataset the atlas was built from: the
    exemplar ids encode row indices into it.
    """
    samples = []
    for eid in atlas.exemplar_ids:
        row = exemplar_row(eid)
        if row >= len(clustered_data):
            raise DimensionMismatch(
                f"exemplar {eid!r} points outside the {len(clustered_data)}-row dataset"
            )
        samples.append(clustered_data.samples[row])
    return Dataset(samples, modality=clustered_data.modality, split=clustered_data.split)


def naive_finetune(base: DenseHead, new_data: Dataset, epochs: int,
                   learning_rate: float | None = None, batch_size: int | None = None,
                   seed: int | None = None) -> DenseHead:
    """Plain gradient-descent fine-tuning on the new data only.

    The forgetting comparator: same optimizer as regular training, no
    constraints, nothing protecting the old data.
    """
    model = base.copy()
    model.config = replace(
        base.config,
        epochs=epochs,
        learning_rate=learning_rate if learning_rate is not None else base.config.learning_rate,
        batch_size=batch_size if batch_size is not None else base.config.batch_size,
        seed=seed if seed is not None else base.config.seed,
    )
    train_mse(model, new_data)
    return model
