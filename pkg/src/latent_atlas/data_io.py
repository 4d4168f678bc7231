"""Dataset ingestion, modality pairing, and synthetic benchmark generation.

Datasets are flat lists of samples: a feature vector, a binary label, a
subject id, and a modality tag ("full" or "reduced"). The on-disk format is
CSV with header ``subject_id,label,f0,f1,...`` preceded by one
schema-version comment line; floats are written with ``repr`` so a
save/load round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import EmptyGroup, InconsistentDim, ParseError, SpecInvalid
from .seeding import STREAM_SYNTH, stream_rng

DATASET_SCHEMA = "# latent-atlas/dataset v1"

Modality = Literal["full", "reduced"]
Split = Literal["train", "test"]


@dataclass
class Sample:
    """One record: backbone feature vector plus label and provenance."""

    features: np.ndarray
    label: int
    subject_id: str
    modality: Modality = "full"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1:
            raise InconsistentDim(f"features must be 1-D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ParseError(f"non-finite feature for subject {self.subject_id!r}")
        if self.label not in (0, 1):
            raise ParseError(f"label must be 0 or 1, got {self.label!r}")
        if not self.subject_id:
            raise ParseError("subject_id must be a non-empty string")


@dataclass
class Dataset:
    """An ordered collection of samples with uniform feature dimension."""

    samples: list[Sample]
    modality: Modality = "full"
    split: Split = "train"

    def __post_init__(self):
        dims = {s.features.shape[0] for s in self.samples}
        if len(dims) > 1:
            raise InconsistentDim(f"mixed feature dimensions {sorted(dims)}")
        self._X = (
            np.stack([s.features for s in self.samples])
            if self.samples
            else np.zeros((0, 0))
        )
        self._y = np.array([s.label for s in self.samples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    @property
    def features(self) -> np.ndarray:
        """(n, dim) feature matrix."""
        return self._X

    @property
    def labels(self) -> np.ndarray:
        """(n,) int array of 0/1 labels."""
        return self._y

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.samples]


def load_csv(path: str | Path, modality: Modality = "full", split: Split = "train") -> Dataset:
    """Parse a dataset CSV.

    Expects an optional leading ``#`` comment line, then the header
    ``subject_id,label,f0,f1,...``. Rejects non-binary labels and
    non-finite features with the offending 1-based line number.
    """
    path = Path(path)
    samples: list[Sample] = []
    dim: int | None = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                if len(row) < 3 or row[0] != "subject_id" or row[1] != "label":
                    raise ParseError("header must be 'subject_id,label,f0,...'", line=lineno)
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            subject_id, label_text = row[0], row[1]
            if label_text not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {label_text!r}", line=lineno)
            try:
                features = np.array([float(t) for t in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad feature value ({exc})", line=lineno) from None
            if not np.all(np.isfinite(features)):
                raise ParseError("non-finite feature value", line=lineno)
            if dim is None:
                dim = features.shape[0]
            elif features.shape[0] != dim:
                raise InconsistentDim(
                    f"line {lineno}: feature dimension {features.shape[0]} != {dim}"
                )
            samples.append(Sample(features, int(label_text), subject_id, modality))
    if header is None:
        raise ParseError(f"{path}: no header row found")
    return Dataset(samples, modality=modality, split=split)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in the schema read back by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(DATASET_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label"] + [f"f{i}" for i in range(dataset.dim)])
        for s in dataset.samples:
            writer.writerow([s.subject_id, s.label] + [repr(float(x)) for x in s.features])


def pair_augment(
    mri_features: Dataset,
    dat_features: Dataset,
    mode: Literal["per_category", "per_subject"] = "per_category",
) -> Dataset:
    """Cross-combine two single-modality datasets into a full-modality one.

    Each output feature vector is the concatenation of one record from
    ``mri_features`` and one from ``dat_features``. ``per_category``
    combines every pair within the same class; ``per_subject`` only pairs
    records sharing a subject_id. The output size is the sum over groups of
    |left group| * |right group|.
    """
    if mode not in ("per_category", "per_subject"):
        raise ValueError(f"mode must be per_category or per_subject, got {mode!r}")

    def groups(ds: Dataset) -> dict:
        out: dict = {}
        for s in ds.samples:
            key = s.label if mode == "per_category" else s.subject_id
            out.setdefault(key, []).append(s)
        return out

    left, right = groups(mri_features), groups(dat_features)
    if set(left) != set(right):
        only = sorted(set(left).symmetric_difference(right), key=str)
        raise EmptyGroup(f"groups present on one side only: {only}")

    paired: list[Sample] = []
    for key in sorted(left, key=str):
        for lsample in left[key]:
            for rsample in right[key]:
                if mode == "per_subject" and lsample.label != rsample.label:
                    raise EmptyGroup(
                        f"subject {key!r} carries conflicting labels across modalities"
                    )
                paired.append(
                    Sample(
                        np.concatenate([lsample.features, rsample.features]),
                        lsample.label,
                        lsample.subject_id,
                        "full",
                    )
                )
    return Dataset(paired, modality="full", split=mri_features.split)


@dataclass
class SynthSpec:
    """Configuration of the synthetic two-domain benchmark.

    Full-modality features carry the whole class separation; the reduced
    modality sees only the first ``reduced_dim`` coordinates plus extra
    noise, so it is strictly less informative
    (``class_separation_full > class_separation_reduced`` is enforced).
    Each class splits into ``intra_class_modes`` sub-clusters and every
    subject belongs to exactly one of them.
    """

    n_subjects_per_class: int = 12
    records_per_subject: int = 12
    full_dim: int = 16
    reduced_dim: int = 6
    class_separation_full: float = 6.0
    class_separation_reduced: float = 1.6
    intra_class_modes: int = 2
    noise_sigma: float = 1.0
    seed: int = 0
    train_fraction: float = 2 / 3
    mode_spread: float = 2.0
    reduced_extra_noise: float = 1.0
    subject_jitter: float = 0.25

    def validate(self) -> None:
        if self.n_subjects_per_class < 2 or self.records_per_subject < 1:
            raise SpecInvalid("need at least 2 subjects per class and 1 record per subject")
        if not (0 < self.reduced_dim < self.full_dim):
            raise SpecInvalid(
                f"reduced_dim must be in (0, full_dim), got {self.reduced_dim}/{self.full_dim}"
            )
        if self.class_separation_full <= self.class_separation_reduced:
            raise SpecInvalid(
                "class_separation_full must exceed class_separation_reduced "
                f"({self.class_separation_full} <= {self.class_separation_reduced})"
            )
        if self.intra_class_modes < 1:
            raise SpecInvalid("intra_class_modes must be >= 1")
        if self.noise_sigma < 0 or self.reduced_extra_noise < 0 or self.subject_jitter < 0:
            raise SpecInvalid("noise levels must be non-negative")
        if not (0 < self.train_fraction < 1):
            raise SpecInvalid("train_fraction must be in (0, 1)")


def generate_synth(spec: SynthSpec) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    """Build (full_train, full_test, reduced_train, reduced_test).

    The reduced datasets describe the same underlying records as the full
    ones (a lossy view: leading coordinates plus Gaussian noise). Subjects
    are partitioned between train and test with no overlap, and everything
    is deterministic for a fixed seed.
    """
    spec.validate()
    rng = stream_rng(spec.seed, STREAM_SYNTH)
    d, dr = spec.full_dim, spec.reduced_dim

    # Class means: the reduced-visible block carries class_separation_reduced
    # of the between-class distance, the remaining coordinates make the total
    # distance up to class_separation_full.
    mean = np.zeros((2, d))
    u_red = rng.standard_normal(dr)
    u_red /= np.linalg.norm(u_red)
    mean[1, :dr] = spec.class_separation_reduced * u_red
    hidden = d - dr
    u_hid = rng.standard_normal(hidden)
    u_hid /= np.linalg.norm(u_hid)
    extra = np.sqrt(spec.class_separation_full**2 - spec.class_separation_reduced**2)
    mean[1, dr:] = extra * u_hid

    # Sub-cluster (stage) centers per class. Stage offsets are full strength
    # in the full-only coordinate block and attenuated in the reduced block
    # by the same factor as the class signal, so the reduced view is a
    # proportionally weaker picture of the whole structure (and carries
    # exactly nothing when class_separation_reduced is zero).
    visibility = spec.class_separation_reduced / spec.class_separation_full
    mode_centers = {}
    for c in (0, 1):
        centers = np.tile(mean[c], (spec.intra_class_modes, 1))
        centers[:, dr:] += spec.mode_spread * rng.standard_normal((spec.intra_class_modes, hidden))
        centers[:, :dr] += visibility * spec.mode_spread * rng.standard_normal((spec.intra_class_modes, dr))
        mode_centers[c] = centers

    n_train_subj = max(1, min(
        spec.n_subjects_per_class - 1,
        int(round(spec.train_fraction * spec.n_subjects_per_class)),
    ))

    buckets: dict[tuple[str, str], list[Sample]] = {
        (m, sp): [] for m in ("full", "reduced") for sp in ("train", "test")
    }
    for c in (0, 1):
        for s_idx in range(spec.n_subjects_per_class):
            subject = f"{'np' if c == 0 else 'pt'}{s_idx:03d}"
            split = "train" if s_idx < n_train_subj else "test"
            mode = int(rng.integers(spec.intra_class_modes))
            center = mode_centers[c][mode] + spec.subject_jitter * spec.noise_sigma * rng.standard_normal(d)
            for _ in range(spec.records_per_subject):
                full = center + spec.noise_sigma * rng.standard_normal(d)
                reduced = full[:dr] + spec.reduced_extra_noise * rng.standard_normal(dr)
                buckets[("full", split)].append(Sample(full, c, subject, "full"))
                buckets[("reduced", split)].append(Sample(reduced, c, subject, "reduced"))

    return (
        Dataset(buckets[("full", "train")], "full", "train"),
        Dataset(buckets[("full", "test")], "full", "test"),
        Dataset(buckets[("reduced", "train")], "reduced", "train"),
        Dataset(buckets[("reduced", "test")], "reduced", "test"),
    )
