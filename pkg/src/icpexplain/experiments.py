"""Desk-scale experiment setups shared by the CLI, tests and demos."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import gpc, shapes
from .active import LabeledSet, UnlabeledPool
from .features import as_matrix, fit_standardizer
from .gpc import KernelSpec, SvgpModel, TrainOptions
from .icp import IcpParams
from .perturb import PerturbSpec, Vocabulary, synth_dataset
from .pipeline import embed_pairs

DESK_BASES = ("sphere", "box", "bunny")


def desk_bases(names: Sequence[str] = DESK_BASES, points: int = 2000):
    return [shapes.builtin(n, points, seed=0) for n in names]


def new_model(vocabulary: Vocabulary, standardizer, kernel: str = "rbf", num_inducing: int = 32) -> SvgpModel:
    return SvgpModel(vocabulary, KernelSpec(kernel, 1.0, 1.0), num_inducing=num_inducing,
                     standardizer=standardizer)


@dataclass
class AttributionSplit:
    train_embeddings: list
    train_labels: list
    test_embeddings: list
    test_labels: list


def attribution_split(seed: int, n_train: int = 240, n_test: int = 60, points: int = 2000,
                      params: Optional[IcpParams] = None) -> AttributionSplit:
    """Balanced synthetic pairs on the desk bases, embedded and split in order."""
    n = n_train + n_test
    per_concept = -(-n // 3)
    pairs = synth_dataset(desk_bases(points=points), per_concept, PerturbSpec(seed=seed), DESK_BASES)[:n]
    emb, labels, _ = embed_pairs(pairs, params)
    return AttributionSplit(emb[:n_train], labels[:n_train], emb[n_train:], labels[n_train:])


def train_attribution_model(split: AttributionSplit, seed: int, opt: Optional[TrainOptions] = None,
                            kernel: str = "rbf", num_inducing: int = 32) -> SvgpModel:
    opt = opt or TrainOptions(seed=seed)
    model = new_model(Vocabulary(), fit_standardizer(split.train_embeddings), kernel, num_inducing)
    return gpc.train(model, as_matrix(split.train_embeddings), split.train_labels, opt)


@dataclass
class ThirdConceptScenario:
    model: SvgpModel
    labeled: LabeledSet
    pool: UnlabeledPool
    validation: LabeledSet


def third_concept_scenario(seed: int, initial_per_concept: int = 30, pool_per_concept: int = 100,
                           validation_per_concept: int = 30, points: int = 2000,
                           params: Optional[IcpParams] = None,
                           train_iterations: int = 150) -> ThirdConceptScenario:
    """A model that knows noise and pose meets a pool where overlap also occurs.

    The pool is balanced over all three concepts and so is the validation
    set; labels for the pool stay hidden behind the simulation oracle.
    """
    bases = desk_bases(points=points)
    known = Vocabulary(["noise", "pose"])
    full = Vocabulary()
    initial = synth_dataset(bases, initial_per_concept, PerturbSpec(seed=seed), DESK_BASES, known)
    # distinct seed streams so the three sets never share samples
    pool = synth_dataset(bases, pool_per_concept, PerturbSpec(seed=seed + 10_000), DESK_BASES, full)
    val = synth_dataset(bases, validation_per_concept, PerturbSpec(seed=seed + 20_000), DESK_BASES, full)
    e_init, y_init, _ = embed_pairs(initial, params)
    e_pool, y_pool, _ = embed_pairs(pool, params)
    e_val, y_val, _ = embed_pairs(val, params)
    model = new_model(known, fit_standardizer(e_init))
    model = gpc.train(model, as_matrix(e_init), y_init, TrainOptions(seed=seed, iterations=train_iterations))
    return ThirdConceptScenario(
        model,
        LabeledSet(as_matrix(e_init), y_init),
        UnlabeledPool(list(range(len(e_pool))), as_matrix(e_pool), y_pool),
        LabeledSet(as_matrix(e_val), y_val),
    )


def median_or_inf(values) -> float:
    vals = [np.inf if v is None else v for v in values]
    return float(np.median(vals))
