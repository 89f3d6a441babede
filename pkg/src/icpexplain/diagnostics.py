"""Uncertainty-quality metrics: rank correlation, coverage-risk AUC and ECE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .features import as_matrix


@dataclass
class EvalRecord:
    confidence: float
    uncertainty: float
    correct: bool
    distance_to_train: float = 0.0


def spearman_rho(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman_rho needs two 1-D sequences of equal length")
    if len(x) < 3:
        raise ValueError("spearman_rho needs at least 3 observations")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        raise ValueError("undefined rank correlation: constant input")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def distance_to_train(h, train) -> float:
    """Euclidean distance to the nearest training embedding (inputs already standardized)."""
    T = as_matrix(train) if not hasattr(train, "embeddings") else as_matrix(train.embeddings)
    if len(T) == 0:
        raise ValueError("training set is empty")
    h = np.asarray(getattr(h, "values", h), float).ravel()
    return float(np.sqrt(((T - h) ** 2).sum(axis=1)).min())


def distances_to_train(H, train) -> np.ndarray:
    T = as_matrix(train)
    return cKDTree(T).query(as_matrix(H), k=1)[0]


def coverage_risk_curve(records: Sequence[EvalRecord]):
    """Coverage levels and the error rate among the kept (most confident) records.

    Records are ranked by confidence, highest first. Tied confidences cannot
    be separated by a threshold, so coverage levels sit at the end of each
    group of equal confidence. Returns ``(coverage, risk)`` arrays.
    """
    if not records:
        raise ValueError("need at least one record")
    conf = np.array([r.confidence for r in records], float)
    wrong = np.array([not r.correct for r in records], float)
    order = np.argsort(-conf, kind="stable")
    conf, wrong = conf[order], wrong[order]
    n = len(conf)
    ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    kept = ends + 1
    return kept / n, np.cumsum(wrong)[ends] / kept


def coverage_risk_auc(records: Sequence[EvalRecord]) -> float:
    """Area under risk vs. coverage on (0, 1], lower is better.

    Trapezoids join consecutive coverage levels; below the smallest level the
    risk is held at its first value, so a constant risk r integrates to r.
    """
    coverage, risk = coverage_risk_curve(records)
    area = coverage[0] * risk[0]
    area += np.sum(np.diff(coverage) * (risk[1:] + risk[:-1]) / 2.0)
    return float(area)


def ece(records: Sequence[EvalRecord], bins: int = 10) -> float:
    """Expected calibration error over equal-width, right-closed confidence bins."""
    if not records:
        raise ValueError("need at least one record")
    if bins < 1:
        raise ValueError("bins must be at least 1")
    conf = np.array([r.confidence for r in records], float)
    correct = np.array([r.correct for r in records], float)
    edges = np.arange(bins + 1) / bins
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    filled = counts > 0
    gaps = np.abs(conf_sum[filled] - acc_sum[filled]) / counts[filled]
    return float(np.sum(counts[filled] / len(conf) * gaps))


def summarize(records: Sequence[EvalRecord], bins: int = 10) -> dict:
    out = {"auc": coverage_risk_auc(records), "ece": ece(records, bins)}
    try:
        out["rho"] = spearman_rho([r.uncertainty for r in records],
                                  [r.distance_to_train for r in records])
    except ValueError:
        out["rho"] = None
    return {"rho": out["rho"], "auc": out["auc"], "ece": out["ece"]}
