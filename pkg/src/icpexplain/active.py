"""BALD acquisition, score-then-diversify batches and the active-learning loop."""
from __future__ import annotations

import sys
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import gpc
from .features import as_matrix
from .gpc import PredictConfig, SvgpModel, TrainOptions


@dataclass
class AcquisitionConfig:
    budget_per_round: int = 1
    expansion_factor: int = 4
    mc_samples: int = 1000
    kmeans_max_iters: int = 100
    kmeans_restarts: int = 4
    seed: int = 0
    rounds_max: int = 300
    target_accuracy: float = 0.9
    strategy: str = "bald"
    retrain_iterations: int = 100
    learning_rate: float = 0.01
    # online trigger: start a round once this many of the last `trigger_window` cases deferred
    trigger_uncertain_count: int = 10
    trigger_window: int = 50

    def __post_init__(self):
        if self.budget_per_round < 1:
            raise ValueError("budget_per_round must be at least 1")
        if self.expansion_factor < 2:
            raise ValueError("expansion_factor must be at least 2")
        if self.strategy not in ("bald", "random"):
            raise ValueError("strategy must be 'bald' or 'random'")
        if not 1 <= self.trigger_uncertain_count <= self.trigger_window:
            raise ValueError("trigger_uncertain_count must lie in [1, trigger_window]")


class AccumulationTrigger:
    """Decides when enough uncertain cases have piled up to run an acquisition round.

    Feed it one flag per processed case (for example ``Attribution.defer``).
    It fires once at least ``count`` of the last ``window`` cases were
    uncertain, then starts counting afresh.
    """

    def __init__(self, count: int = 10, window: int = 50):
        if not 1 <= count <= window:
            raise ValueError("count must lie in [1, window]")
        self.count = count
        self._recent = deque(maxlen=window)

    @classmethod
    def from_config(cls, cfg: AcquisitionConfig) -> "AccumulationTrigger":
        return cls(cfg.trigger_uncertain_count, cfg.trigger_window)

    def observe(self, uncertain: bool) -> bool:
        self._recent.append(bool(uncertain))
        if sum(self._recent) >= self.count:
            self._recent.clear()
            return True
        return False


@dataclass
class UnlabeledPool:
    """Embeddings awaiting labels. ``hidden_labels`` backs the simulation oracle."""

    ids: list
    embeddings: np.ndarray
    hidden_labels: Optional[list] = None

    def __post_init__(self):
        self.ids = list(self.ids)
        self.embeddings = as_matrix(self.embeddings)
        if len(self.ids) != len(self.embeddings):
            raise ValueError("pool ids and embeddings differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("pool ids must be unique")

    def __len__(self):
        return len(self.ids)

    def take(self, ids) -> tuple[np.ndarray, list]:
        """Remove ``ids`` from the pool; returns their embeddings and hidden labels."""
        pos = {i: k for k, i in enumerate(self.ids)}
        rows = [pos[i] for i in ids]
        X = self.embeddings[rows]
        hidden = [self.hidden_labels[r] for r in rows] if self.hidden_labels is not None else None
        keep = np.setdiff1d(np.arange(len(self.ids)), rows)
        self.ids = [self.ids[k] for k in keep]
        self.embeddings = self.embeddings[keep]
        if self.hidden_labels is not None:
            self.hidden_labels = [self.hidden_labels[k] for k in keep]
        return X, hidden


@dataclass
class LabeledSet:
    embeddings: np.ndarray
    labels: list
    ids: list = field(default_factory=list)
    # per item: {"round": r, "score": s} for acquired items, {} for seed items
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings) if len(self.labels) else np.zeros((0, 0))
        self.labels = [getattr(l, "name", l) for l in self.labels]
        if not self.ids:
            self.ids = list(range(len(self.labels)))
        if not self.provenance:
            self.provenance = [{} for _ in self.labels]

    def __len__(self):
        return len(self.labels)

    def add(self, ids, X, labels, provenance):
        X = np.atleast_2d(X)
        self.embeddings = X if len(self) == 0 else np.vstack([self.embeddings, X])
        self.labels.extend(getattr(l, "name", l) for l in labels)
        self.ids.extend(ids)
        self.provenance.extend(provenance)


@dataclass
class AlRound:
    round: int
    cumulative_labels: int
    val_accuracy: float
    mean_bald: float
    retrain_seconds: float


@dataclass
class AlHistory:
    rounds: list = field(default_factory=list)

    def labels_to_target(self, target: float) -> Optional[int]:
        for r in self.rounds:
            if r.val_accuracy >= target:
                return r.cumulative_labels
        return None

    def to_csv(self) -> str:
        lines = ["round,cumulative_labels,val_accuracy,mean_bald"]
        for r in self.rounds:
            bald = "" if np.isnan(r.mean_bald) else repr(float(r.mean_bald))
            lines.append(f"{r.round},{r.cumulative_labels},{r.val_accuracy!r},{bald}")
        return "\n".join(lines) + "\n"


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, float)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def bald_from_probabilities(probs: np.ndarray) -> np.ndarray:
    """Unclamped BALD from per-sample probabilities shaped (..., M, C)."""
    mean = probs.mean(axis=-2)
    return entropy(mean) - entropy(probs).mean(axis=-1)


def bald_score(model: SvgpModel, h, cfg: Optional[PredictConfig] = None, clamp: bool = True) -> float:
    attr = gpc.attribute(model, h, cfg)
    score = float(bald_from_probabilities(attr.probabilities))
    return max(score, 0.0) if clamp else score


def bald_scores(model: SvgpModel, H, cfg: Optional[PredictConfig] = None, clamp: bool = True) -> np.ndarray:
    _, _, probs = gpc.predict_proba(model, H, cfg)
    scores = bald_from_probabilities(probs)
    return np.maximum(scores, 0.0) if clamp else scores


def _predict_cfg(cfg: AcquisitionConfig) -> PredictConfig:
    return PredictConfig(mc_samples=cfg.mc_samples, seed=cfg.seed)


def select_batch(model: SvgpModel, pool: UnlabeledPool, cfg: AcquisitionConfig,
                 return_scores: bool = False):
    """Top B*K pool items by BALD, then one representative per k-means cluster.

    Returns ``B`` distinct pool ids ordered by cluster label (and their BALD
    scores when ``return_scores`` is set).
    """
    B, K = cfg.budget_per_round, cfg.expansion_factor
    need = B * K
    if len(pool) < need:
        raise ValueError(f"pool has {len(pool)} items but selection needs at least B*K={need}")
    scores = bald_scores(model, pool.embeddings, _predict_cfg(cfg))
    ids = np.asarray(pool.ids)
    # descending score, ties by lowest id
    order = np.lexsort((ids, -scores))[:need]
    X = model.prepare(pool.embeddings[order])
    if B == 1:
        centers = X.mean(axis=0, keepdims=True)
        assign = np.zeros(len(order), dtype=int)
    else:
        km = KMeans(n_clusters=B, init="k-means++", n_init=cfg.kmeans_restarts,
                    max_iter=cfg.kmeans_max_iters, random_state=cfg.seed)
        assign = km.fit_predict(X)
        centers = km.cluster_centers_
    chosen = []
    for c in range(len(centers)):
        members = np.flatnonzero(assign == c)
        if len(members) == 0:
            continue
        d = np.linalg.norm(X[members] - centers[c], axis=1)
        best = members[np.lexsort((ids[order[members]], d))[0]]
        chosen.append(int(order[best]))
    # empty clusters only happen with duplicate candidates; top up by score
    for k in range(len(order)):
        if len(chosen) >= B:
            break
        if int(order[k]) not in chosen:
            chosen.append(int(order[k]))
    picked = [pool.ids[i] for i in chosen[:B]]
    if return_scores:
        return picked, scores[chosen[:B]]
    return picked


class SimulationOracle:
    """Answers label queries from the pool's hidden ground truth."""

    def __init__(self, pool: UnlabeledPool):
        self._truth = dict(zip(pool.ids, pool.hidden_labels or []))

    def __call__(self, ids):
        return [getattr(self._truth[i], "name", self._truth[i]) for i in ids]


class InteractiveOracle:
    """Asks a human for each label on a text stream (stdin by default)."""

    def __init__(self, vocabulary: Sequence[str], stream_in=None, stream_out=None):
        self.vocabulary = list(vocabulary)
        self.stream_in = stream_in or sys.stdin
        self.stream_out = stream_out or sys.stderr

    def __call__(self, ids):
        out = []
        for i in ids:
            menu = ", ".join(f"{k}={name}" for k, name in enumerate(self.vocabulary))
            self.stream_out.write(f"label for item {i} [{menu}, or a new concept name]: ")
            self.stream_out.flush()
            answer = self.stream_in.readline().strip()
            if answer.isdigit() and int(answer) < len(self.vocabulary):
                answer = self.vocabulary[int(answer)]
            elif answer not in self.vocabulary:
                self.vocabulary.append(answer)
            out.append(answer)
        return out


def validation_accuracy(model: SvgpModel, validation: LabeledSet, cfg: PredictConfig) -> float:
    """Labels the model does not know yet count as errors."""
    if len(validation) == 0:
        return float("nan")
    pred = gpc.predict(model, validation.embeddings, cfg)
    names = model.vocabulary.names
    return float(np.mean([names[p] == lab for p, lab in zip(pred, validation.labels)]))


def run_al_loop(model: SvgpModel, labeled: LabeledSet, pool: UnlabeledPool, validation: LabeledSet,
                oracle: Callable, cfg: AcquisitionConfig, universe: Optional[Sequence[str]] = None):
    """Acquire labels until validation accuracy reaches the target.

    Each round scores the pool, selects a batch (BALD + k-means or uniform
    random, per ``cfg.strategy``), asks the oracle, adds unseen concepts to the
    model, moves the items to ``labeled`` and retrains from the current
    parameters. ``labeled`` and ``pool`` are updated in place.
    """
    universe = None if universe is None else set(universe)
    pcfg = _predict_cfg(cfg)
    rng = np.random.default_rng([cfg.seed, 0xA1])
    history = AlHistory()
    total = len(labeled) + len(pool)
    acquired = 0
    mean_bald = float("nan")
    retrain_seconds = 0.0
    for rnd in range(cfg.rounds_max + 1):
        acc = validation_accuracy(model, validation, pcfg)
        history.rounds.append(AlRound(rnd, acquired, acc, mean_bald, retrain_seconds))
        if acc >= cfg.target_accuracy or rnd == cfg.rounds_max or len(pool) == 0:
            break
        B = min(cfg.budget_per_round, len(pool))
        if cfg.strategy == "random":
            rows = np.sort(rng.choice(len(pool), B, replace=False))
            ids = [pool.ids[r] for r in rows]
            scores = bald_scores(model, pool.embeddings[rows], pcfg)
        elif len(pool) >= B * cfg.expansion_factor:
            ids, scores = select_batch(model, pool, replace(cfg, budget_per_round=B), return_scores=True)
        else:
            # too few items left to expand; take the top B by score
            all_scores = bald_scores(model, pool.embeddings, pcfg)
            rows = np.lexsort((np.asarray(pool.ids), -all_scores))[:B]
            ids = [pool.ids[r] for r in rows]
            scores = all_scores[rows]
        labels = list(oracle(ids))
        for name in labels:
            if universe is not None and name not in universe:
                raise ValueError(f"oracle returned {name!r}, outside the declared concepts {sorted(universe)}")
            if name not in model.vocabulary:
                model = gpc.add_class(model, name)
        X, _ = pool.take(ids)
        labeled.add(ids, X, labels, [{"round": rnd, "score": float(s)} for s in scores])
        acquired += len(ids)
        mean_bald = float(np.mean(scores))
        started = time.perf_counter()
        model = gpc.train(model, labeled.embeddings, labeled.labels,
                          TrainOptions(learning_rate=cfg.learning_rate, iterations=cfg.retrain_iterations,
                                       seed=cfg.seed + rnd + 1, warm_start=True))
        retrain_seconds = time.perf_counter() - started
        assert len(labeled) + len(pool) == total
    return model, history
