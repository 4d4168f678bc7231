"""Dense linear algebra for constraint-preserving weight updates.

Vectors and matrices are plain float64 ndarrays. The two public operations
are the minimum-norm solver for wide linear systems and a gradient-projection
minimizer over the affine subspace ``{x : V @ x = v}``. Both are pure
functions over immutable inputs.

The minimum-norm solve factorizes the small Gram matrix ``V @ V.T`` (the
systems in this problem family have far fewer rows than columns) with an
unpivoted Cholesky decomposition whose pivots are checked against a
scale-aware cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, SingularSystem

# Pivots below this fraction of the largest pivot mark the Gram matrix as
# rank deficient.
PIVOT_RTOL = 1e-10


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionMismatch(f"{name} must be 1-D and non-empty, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionMismatch(f"{name} contains non-finite elements")
    return x


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DimensionMismatch(f"{name} must be 2-D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch(f"{name} contains non-finite elements")
    return a


def _cholesky_checked(gram: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix, with a relative pivot cutoff.

    Raises SingularSystem when any pivot falls below PIVOT_RTOL times the
    largest pivot seen so far (or is non-positive).
    """
    n = gram.shape[0]
    lower = np.zeros_like(gram)
    max_pivot = 0.0
    for i in range(n):
        pivot = gram[i, i] - lower[i, :i] @ lower[i, :i]
        max_pivot = max(max_pivot, pivot)
        if pivot <= 0.0 or pivot < PIVOT_RTOL * max_pivot:
            raise SingularSystem(
                f"Gram matrix is rank deficient at row {i} "
                f"(pivot {pivot:.3e}, largest {max_pivot:.3e})"
            )
        lower[i, i] = np.sqrt(pivot)
        if i + 1 < n:
            lower[i + 1 :, i] = (gram[i + 1 :, i] - lower[i + 1 :, :i] @ lower[i, :i]) / lower[i, i]
    return lower


def _gram_solve(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) x = rhs given the lower Cholesky factor L."""
    y = solve_triangular(lower, rhs, lower=True)
    return solve_triangular(lower.T, y, lower=False)


def least_norm_solve(V: np.ndarray, v: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Minimum-Euclidean-norm solution of the wide system ``V @ x = v``.

    ``V`` must have more columns than rows. The solution is
    ``V.T @ (V @ V.T)^-1 @ v``, computed via Cholesky factorization of the
    Gram matrix. Raises SingularSystem when the rows are (numerically)
    linearly dependent, or when the returned residual exceeds ``tol``.
    """
    V = as_matrix(V, "V")
    v = as_vector(v, "v")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    rows, cols = V.shape
    if cols <= rows:
        raise DimensionMismatch(f"V must be wide (cols > rows), got {rows}x{cols}")
    if v.shape[0] != rows:
        raise DimensionMismatch(f"v has {v.shape[0]} entries but V has {rows} rows")

    lower = _cholesky_checked(V @ V.T)
    x = V.T @ _gram_solve(lower, v)
    residual = float(np.linalg.norm(V @ x - v))
    if residual > tol:
        raise SingularSystem(f"residual {residual:.3e} exceeds tol {tol:.3e}")
    return x


@dataclass
class GradientProjectionResult:
    """Solution plus convergence diagnostics.

    ``converged`` is False when the projected gradient norm was still above
    tol after max_iter; the best iterate is returned regardless.
    """

    x: np.ndarray
    converged: bool
    n_iter: int
    projected_grad_norm: float
    max_constraint_residual: float
    residual_history: list[float] = field(default_factory=list, repr=False)


def gradient_projection(
    objective_grad,
    constraint: tuple[np.ndarray, np.ndarray],
    x0: np.ndarray,
    step: float,
    max_iter: int,
    tol: float,
    objective=None,
) -> GradientProjectionResult:
    """Minimize an objective over the affine subspace ``{x : V @ x = v}``.

    Descends along the gradient projected onto the null space of V, so every
    iterate stays on the constraint subspace; the residual ``||V x - v||`` is
    monitored each iteration and the iterate is re-projected if drift exceeds
    tol/2. When ``objective`` is given, a failed decrease triggers step
    halving (factor 0.5, at most 30 halvings); without it the step is fixed.

    ``x0`` is brought onto the subspace by a minimum-norm correction if it
    does not already satisfy the constraint within tol.
    """
    V, v = constraint
    V = as_matrix(V, "V")
    v = as_vector(v, "v")
    x = as_vector(x0, "x0").copy()
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if V.shape[1] != x.shape[0] or V.shape[0] != v.shape[0]:
        raise DimensionMismatch(
            f"constraint shapes V {V.shape}, v {v.shape} incompatible with x {x.shape}"
        )

    lower = _cholesky_checked(V @ V.T)

    def restore(y: np.ndarray) -> np.ndarray:
        return y + V.T @ _gram_solve(lower, v - V @ y)

    def project(g: np.ndarray) -> np.ndarray:
        return g - V.T @ _gram_solve(lower, V @ g)

    if np.linalg.norm(V @ x - v) > tol:
        x = restore(x)

    residuals = [float(np.linalg.norm(V @ x - v))]
    f_x = objective(x) if objective is not None else None
    pg_norm = np.inf
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        pg = project(np.asarray(objective_grad(x), dtype=np.float64))
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm <= tol:
            converged = True
            iterations -= 1
            break

        alpha = step
        x_new = x - alpha * pg
        if objective is not None:
            for _ in range(30):
                if objective(x_new) < f_x:
                    break
                alpha *= 0.5
                x_new = x - alpha * pg
            else:
                # Objective is flat along the projected gradient at float
                # resolution; no step can improve it.
                iterations -= 1
                break
            f_x = objective(x_new)
        x = x_new

        res = float(np.linalg.norm(V @ x - v))
        if res > tol / 2:
            x = restore(x)
            res = float(np.linalg.norm(V @ x - v))
            if objective is not None:
                f_x = objective(x)
        residuals.append(res)
    else:
        pg = project(np.asarray(objective_grad(x), dtype=np.float64))
        pg_norm = float(np.linalg.norm(pg))
        converged = pg_norm <= tol

    return GradientProjectionResult(
        x=x,
        converged=converged,
        n_iter=iterations,
        projected_grad_norm=pg_norm,
        max_constraint_residual=max(residuals),
        residual_history=residuals,
    )
