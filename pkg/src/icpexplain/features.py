"""Analytical embeddings of aligned pairs, standardization and embedding CSVs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import KdTree, PointCloud, estimate_normals
from .icp import RegistrationResult
from .perturb import ConceptLabel, Vocabulary

FEATURE_NAMES = (
    "rmse",
    "median_residual",
    "q90_residual",
    "residual_std",
    "inlier_fraction",
    "overlap_fraction",
    "point_count_ratio",
    "normal_consistency",
    "planarity",
    "linearity",
    "sphericity",
    "centroid_offset",
    "bbox_volume_ratio",
    "iteration_ratio",
    "converged",
    "log1p_uncertainty",
)
OVERLAP_RADIUS = 0.02  # fraction of target diameter


@dataclass
class Embedding:
    values: np.ndarray
    feature_names: tuple = ()
    source: str = "analytical"
    # set when eigen-features 9-11 fell back to zero
    degenerate: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding values must be finite")
        if not self.feature_names:
            self.feature_names = tuple(f"f{i}" for i in range(len(self.values)))

    def __len__(self):
        return len(self.values)


def _eigen_shape(points: np.ndarray):
    """Sorted covariance eigenvalues l1 >= l2 >= l3 (clipped at 0)."""
    cov = np.cov(points.T, bias=True) if len(points) > 1 else np.zeros((3, 3))
    return np.clip(np.sort(np.linalg.eigvalsh(cov))[::-1], 0.0, None)


def _pca_box_volume(points: np.ndarray) -> float:
    centered = points - points.mean(axis=0)
    if len(points) < 2:
        return 0.0
    _, vecs = np.linalg.eigh(np.cov(centered.T, bias=True))
    local = centered @ vecs
    return float(np.prod(local.max(axis=0) - local.min(axis=0)))


def extract_features(aligned_source: PointCloud, target: PointCloud, result: RegistrationResult,
                     k: int = 10, max_iterations: int = 50,
                     target_diameter: Optional[float] = None) -> Embedding:
    """The 16-value analytical embedding of an ICP-aligned pair.

    Every distance is divided by the target diameter and the remaining terms
    are ratios or counts, so the vector is unchanged when one rigid motion is
    applied to both clouds.
    """
    diameter = target_diameter if target_diameter is not None else target.diameter()
    diameter = diameter if diameter > 0 else 1.0
    src = aligned_source.points
    tree = KdTree(target)
    idx, resid = tree.nearest(src, break_ties=False)

    median = float(np.median(resid))
    # floor keeps float round-off on exact overlaps from splitting the inliers
    inlier_fraction = float(np.mean(resid <= max(2.0 * median, 1e-9 * diameter)))
    overlap_fraction = float(np.mean(resid < OVERLAP_RADIUS * diameter))

    k_src = min(k, len(aligned_source))
    k_tgt = min(k, len(target))
    if k_src >= 3 and k_tgt >= 3:
        n_src = estimate_normals(aligned_source, k_src).normals
        n_tgt = estimate_normals(target, k_tgt).normals
        normal_consistency = float(np.mean(np.abs(np.einsum("ij,ij->i", n_src, n_tgt[idx]))))
    else:
        normal_consistency = 0.0

    l1, l2, l3 = _eigen_shape(src)
    degenerate = l1 <= 0.0
    if degenerate:
        planarity = linearity = sphericity = 0.0
    else:
        planarity, linearity, sphericity = (l2 - l3) / l1, (l1 - l2) / l1, l3 / l1

    vol_t = _pca_box_volume(target.points)
    volume_ratio = _pca_box_volume(src) / vol_t if vol_t > 0 else 0.0

    values = np.array([
        result.rmse / diameter,
        median / diameter,
        float(np.quantile(resid, 0.9)) / diameter,
        float(np.std(resid)) / diameter,
        inlier_fraction,
        overlap_fraction,
        len(aligned_source) / len(target),
        normal_consistency,
        planarity,
        linearity,
        sphericity,
        float(np.linalg.norm(aligned_source.centroid() - target.centroid())) / diameter,
        volume_ratio,
        result.iterations / max_iterations,
        1.0 if result.converged else 0.0,
        float(np.log1p(result.uncertainty)),
    ])
    return Embedding(values, FEATURE_NAMES, "analytical", bool(degenerate))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, float)
        self.std = np.asarray(self.std, float)
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.mean), dtype=bool)
        self.degenerate = np.asarray(self.degenerate, bool)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) / self.std

    def inverse_transform(self, X) -> np.ndarray:
        return np.asarray(X, float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"]), np.array(d["std"]), np.array(d["degenerate"], bool))


def as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return np.atleast_2d(embeddings.astype(float))
    dims = {len(e) for e in embeddings}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensionality: {sorted(dims)}")
    return np.array([e.values for e in embeddings], dtype=float)


def fit_standardizer(embeddings) -> Standardizer:
    """Per-dimension mean and population std; constant columns get std 1."""
    X = as_matrix(embeddings)
    if len(X) < 2:
        raise ValueError("need at least two embeddings to standardize")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    std = np.where(degenerate, 1.0, std)
    return Standardizer(mean, std, degenerate)


class EmbeddingParseError(ValueError):
    pass


def export_embeddings(path, embeddings, labels: Optional[Sequence] = None) -> None:
    """Write the embedding CSV: header ``f0..f{d-1}[,label]``, repr-precision."""
    X = as_matrix(embeddings)
    header = [f"f{i}" for i in range(X.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                lab = labels[i]
                cells.append(lab.name if isinstance(lab, ConceptLabel) else str(lab))
            w.writerow(cells)


def import_embeddings(path, vocabulary: Optional[Vocabulary] = None, extend_vocab: bool = False):
    """Parse an embedding CSV into ``[(Embedding, ConceptLabel | None)]``.

    Unknown label strings are an error unless ``extend_vocab`` is set, in which
    case they are appended to the vocabulary. Returns ``(rows, vocabulary)``.
    """
    vocabulary = vocabulary or Vocabulary()
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmbeddingParseError(f"{path}: empty file") from None
        has_label = bool(header) and header[-1] == "label"
        names = tuple(header[:-1] if has_label else header)
        if not names:
            raise EmbeddingParseError(f"{path}: header has no feature columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EmbeddingParseError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            cells = row[:-1] if has_label else row
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise EmbeddingParseError(f"{path}: row {lineno} has a non-numeric cell") from None
            if not np.all(np.isfinite(values)):
                raise EmbeddingParseError(f"{path}: row {lineno} has a non-finite value")
            label = None
            if has_label:
                name = row[-1].strip()
                if name not in vocabulary:
                    if not extend_vocab:
                        raise EmbeddingParseError(
                            f"{path}: row {lineno} has unknown label {name!r}; "
                            f"vocabulary is {vocabulary.names} (use extend_vocab to add it)")
                    vocabulary = vocabulary.extended(name)
                label = vocabulary.label(name)
            rows.append((Embedding(values, names, "imported"), label))
    return rows, vocabulary
