"""Centroid atlas: k-means++ clustering of latents and nearest-centroid use.

The atlas is the transparent classification reference: k centroids of the
training latents, each carrying the majority (mode) class of its members,
free-text annotation, membership statistics, and the id of its nearest
training sample (the exemplar). New latents are classified by nearest
centroid, and per-subject assignment counts form the tabular reports.

Atlas files are JSON documents with keys
``{version, k, l, centroids, class_labels, annotations, member_counts,
purity, exemplar_ids}``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dense_head import LatentSet
from .errors import (
    DegenerateCovariance,
    DegenerateData,
    DimensionMismatch,
    IndexOutOfRange,
    TooFewPoints,
)
from .seeding import STREAM_KMEANS, stream_rng

ATLAS_VERSION = 1
REPORT_SCHEMA = "# latent-atlas/subject-report v1"
MEMBERSHIP_SCHEMA = "# latent-atlas/membership v1"
PROJECTION_SCHEMA = "# latent-atlas/projection v1"


@dataclass
class CentroidAtlas:
    """k centroids plus per-cluster labels, annotations, and statistics."""

    centroids: np.ndarray
    class_labels: np.ndarray
    annotations: list[str]
    member_counts: np.ndarray
    purity: np.ndarray
    exemplar_ids: list[str]
    objective_history: list[float] = field(default_factory=list, repr=False)
    n_iter: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.member_counts = np.asarray(self.member_counts, dtype=np.int64)
        self.purity = np.asarray(self.purity, dtype=np.float64)
        k = self.centroids.shape[0]
        lengths = (len(self.class_labels), len(self.annotations),
                   len(self.member_counts), len(self.purity), len(self.exemplar_ids))
        if any(n != k for n in lengths):
            raise DimensionMismatch(f"parallel atlas lists disagree: k={k}, lengths={lengths}")
        if np.any(self.purity < 0) or np.any(self.purity > 1):
            raise ValueError("purity values must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class AssignmentReport:
    """Per-subject assignment counts and overall label agreement.

    ``rows`` maps each subject id (sorted) to a length-k count vector;
    ``accuracy`` is the fraction of vectors whose assigned centroid carries
    the vector's own label (0.0 for an empty report).
    """

    rows: list[tuple[str, np.ndarray]]
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "rows": [[sid, [int(c) for c in counts]] for sid, counts in self.rows],
            "accuracy": float(self.accuracy),
        }


def squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, computed from explicit
    differences so that exact ties stay exact."""
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def exemplar_id(index: int, subject_id: str) -> str:
    """Stable sample identity: row index in the clustered dataset plus the
    subject id, e.g. ``"17:pt003"``."""
    return f"{index}:{subject_id}"


def exemplar_row(eid: str) -> int:
    """Row index encoded in an exemplar id."""
    return int(eid.split(":", 1)[0])


def kmeans_pp(latents: LatentSet, k: int, seed: int = 0, max_iter: int = 100,
              tol: float = 1e-8) -> CentroidAtlas:
    """Cluster latent vectors into a k-centroid atlas.

    Seeding follows k-means++: the first centroid uniform among the points,
    each next one drawn with probability proportional to the squared
    distance from the nearest chosen centroid. Lloyd iterations then
    alternate nearest-centroid assignment and mean updates until the largest
    centroid movement drops below ``tol`` or ``max_iter`` is reached. The
    within-cluster squared-distance objective is recorded per iteration and
    is non-increasing except immediately after an empty-cluster reseed.

    Cluster class labels are the mode class of the members (ties labelled
    1); purity is the fraction of members agreeing with that label.
    """
    X = latents.vectors
    n = len(latents)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if k > n:
        raise TooFewPoints(f"k={k} exceeds the {n} available points")
    if len(np.unique(X, axis=0)) < k:
        warnings.warn(
            f"fewer than k={k} distinct points; duplicate centroids are possible",
            DegenerateData,
        )

    rng = stream_rng(seed, STREAM_KMEANS)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[int(rng.integers(n))]
    d2 = squared_distances(X, centroids[:1]).min(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            choice = int(rng.choice(n, p=probs))
        else:
            choice = int(rng.integers(n))
        centroids[i] = X[choice]
        d2 = np.minimum(d2, squared_distances(X, centroids[i : i + 1]).min(axis=1))

    objective_history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    iteration = 0
    for iteration in range(1, max_iter + 1):
        dist = squared_distances(X, centroids)
        assignments = dist.argmin(axis=1)
        objective_history.append(float(dist[np.arange(n), assignments].sum()))

        new_centroids = centroids.copy()
        for i in range(k):
            members = assignments == i
            if members.any():
                new_centroids[i] = X[members].mean(axis=0)
        empty = [i for i in range(k) if not (assignments == i).any()]
        if empty:
            # Reseed each empty centroid at the point currently worst
            # represented (farthest from its nearest centroid).
            d_near = squared_distances(X, new_centroids).min(axis=1)
            for i in empty:
                far = int(d_near.argmax())
                new_centroids[i] = X[far]
                d_near[far] = 0.0

        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if movement < tol:
            break

    dist = squared_distances(X, centroids)
    assignments = dist.argmin(axis=1)

    class_labels = np.empty(k, dtype=np.int64)
    member_counts = np.empty(k, dtype=np.int64)
    purity = np.empty(k)
    for i in range(k):
        members = latents.labels[assignments == i]
        member_counts[i] = members.size
        if members.size == 0:
            class_labels[i] = 1
            purity[i] = 0.0
            continue
        ones = int(members.sum())
        zeros = members.size - ones
        class_labels[i] = 1 if ones >= zeros else 0
        purity[i] = max(ones, zeros) / members.size

    nearest_rows = dist.argmin(axis=0)
    exemplars = [exemplar_id(int(r), latents.subject_ids[int(r)]) for r in nearest_rows]

    return CentroidAtlas(
        centroids=centroids,
        class_labels=class_labels,
        annotations=[""] * k,
        member_counts=member_counts,
        purity=purity,
        exemplar_ids=exemplars,
        objective_history=objective_history,
        n_iter=iteration,
    )


def assign_nearest(atlas: CentroidAtlas, latents: LatentSet) -> tuple[np.ndarray, AssignmentReport]:
    """Map each latent vector to its nearest centroid.

    Ties break to the lowest centroid index. The report groups counts per
    subject id (sorted) and scores the fraction of vectors whose assigned
    centroid carries the vector's label.
    """
    if len(latents) and latents.dim != atlas.dim:
        raise DimensionMismatch(f"latent dim {latents.dim} != atlas dim {atlas.dim}")
    if len(latents) == 0:
        return np.zeros(0, dtype=np.int64), AssignmentReport(rows=[], accuracy=0.0)
    assignments = squared_distances(latents.vectors, atlas.centroids).argmin(axis=1)

    counts: dict[str, np.ndarray] = {}
    for sid, a in zip(latents.subject_ids, assignments):
        counts.setdefault(sid, np.zeros(atlas.k, dtype=np.int64))[a] += 1
    rows = [(sid, counts[sid]) for sid in sorted(counts)]
    agree = atlas.class_labels[assignments] == latents.labels
    return assignments, AssignmentReport(rows=rows, accuracy=float(np.mean(agree)))


def annotate(atlas: CentroidAtlas, index: int, text: str) -> CentroidAtlas:
    """Attach free-text annotation to one centroid; numeric fields untouched."""
    if not (0 <= index < atlas.k):
        raise IndexOutOfRange(f"centroid index {index} outside [0, {atlas.k})")
    atlas.annotations[index] = text
    return atlas


def project_3d(atlas: CentroidAtlas, latents: LatentSet) -> list[tuple]:
    """Project points and centroids onto the top-3 principal axes.

    The basis comes from the latent set alone (centroids are mapped in the
    same frame). Rows are ``(id, x, y, z, cluster, class)``: centroid rows
    first (id ``centroid_i``), then one row per latent vector keyed by its
    subject id and assigned cluster. With fewer than 3 positive-variance
    directions the missing coordinates are zero-padded under a
    DegenerateCovariance warning.
    """
    if atlas.dim < 3:
        raise DimensionMismatch(f"projection needs dim >= 3, got {atlas.dim}")
    if len(latents) == 0:
        raise DimensionMismatch("cannot build a projection basis from an empty latent set")
    X = latents.vectors
    mean = X.mean(axis=0)
    centered = X - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    n_pos = int((svals > 1e-12 * max(svals[0], 1e-300)).sum()) if svals.size else 0
    if n_pos < 3:
        warnings.warn(
            f"only {n_pos} positive-variance directions; padding with zeros",
            DegenerateCovariance,
        )
    basis = np.zeros((3, X.shape[1]))
    take = min(3, n_pos)
    if take:
        keep = vt[:take]
        # Deterministic sign: largest-magnitude entry of each axis positive.
        signs = np.sign(keep[np.arange(take), np.abs(keep).argmax(axis=1)])
        signs[signs == 0] = 1.0
        basis[:take] = keep * signs[:, None]

    point_xyz = centered @ basis.T
    centroid_xyz = (atlas.centroids - mean) @ basis.T
    assignments, _ = assign_nearest(atlas, latents)

    rows: list[tuple] = []
    for i in range(atlas.k):
        rows.append((f"centroid_{i}", *(float(c) for c in centroid_xyz[i]),
                     i, int(atlas.class_labels[i])))
    for j in range(len(latents)):
        rows.append((latents.subject_ids[j], *(float(c) for c in point_xyz[j]),
                     int(assignments[j]), int(latents.labels[j])))
    return rows


def silhouette_score(latents: LatentSet, assignments: np.ndarray) -> float:
    """Mean silhouette of a clustering; a helper for choosing k by hand."""
    X = latents.vectors
    n = len(X)
    labels = np.asarray(assignments)
    ids = np.unique(labels)
    if ids.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dist = np.sqrt(np.maximum(squared_distances(X, X), 0.0))
    scores = np.zeros(n)
    for j in range(n):
        own = labels == labels[j]
        own_count = own.sum() - 1
        if own_count == 0:
            scores[j] = 0.0
            continue
        a = dist[j, own].sum() / own_count
        b = min(dist[j, labels == c].mean() for c in ids if c != labels[j])
        scores[j] = (b - a) / max(a, b)
    return float(scores.mean())


# ---------------------------------------------------------------------------
# Serialization and report emission
# ---------------------------------------------------------------------------

def save_atlas(atlas: CentroidAtlas, path: str | Path) -> None:
    doc = {
        "version": ATLAS_VERSION,
        "k": atlas.k,
        "l": atlas.dim,
        "centroids": [[float(x) for x in row] for row in atlas.centroids],
        "class_labels": [int(c) for c in atlas.class_labels],
        "annotations": list(atlas.annotations),
        "member_counts": [int(c) for c in atlas.member_counts],
        "purity": [float(p) for p in atlas.purity],
        "exemplar_ids": list(atlas.exemplar_ids),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_atlas(path: str | Path) -> CentroidAtlas:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != ATLAS_VERSION:
        raise ValueError(f"unsupported atlas version {doc.get('version')!r}")
    atlas = CentroidAtlas(
        centroids=np.array(doc["centroids"], dtype=np.float64),
        class_labels=np.array(doc["class_labels"], dtype=np.int64),
        annotations=list(doc["annotations"]),
        member_counts=np.array(doc["member_counts"], dtype=np.int64),
        purity=np.array(doc["purity"], dtype=np.float64),
        exemplar_ids=list(doc["exemplar_ids"]),
    )
    if atlas.dim != doc["l"] or atlas.k != doc["k"]:
        raise DimensionMismatch("atlas header (k, l) disagrees with centroid array")
    return atlas


def write_subject_report_csv(report: AssignmentReport, path: str | Path, k: int) -> None:
    """One row per subject, one count column per centroid (t1..tk)."""
    with Path(path).open("w", newline="") as fh:
        fh.write(REPORT_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + [f"t{i + 1}" for i in range(k)])
        for sid, counts in report.rows:
            writer.writerow([sid] + [int(c) for c in counts])


def write_membership_csv(atlas: CentroidAtlas, path: str | Path) -> None:
    """Per-cluster membership table: counts, share of the data, label,
    purity, exemplar, and annotation."""
    total = int(atlas.member_counts.sum())
    with Path(path).open("w", newline="") as fh:
        fh.write(MEMBERSHIP_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["cluster", "count", "percent", "class", "purity", "exemplar_id", "annotation"])
        for i in range(atlas.k):
            pct = 100.0 * atlas.member_counts[i] / total if total else 0.0
            writer.writerow([
                f"t{i + 1}",
                int(atlas.member_counts[i]),
                f"{pct:.1f}",
                int(atlas.class_labels[i]),
                f"{float(atlas.purity[i]):.4f}",
                atlas.exemplar_ids[i],
                atlas.annotations[i],
            ])


def write_projection_csv(rows: list[tuple], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(PROJECTION_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "z", "cluster", "class"])
        for rid, x, y, z, cluster, cls in rows:
            writer.writerow([rid, repr(float(x)), repr(float(y)), repr(float(z)), cluster, cls])
