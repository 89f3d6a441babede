"""Labelled registration pairs built from one controlled perturbation each."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import PointCloud, RigidTransform, apply_transform, random_rigid_transform

DEFAULT_VOCABULARY = ("noise", "pose", "overlap")


@dataclass(frozen=True)
class ConceptLabel:
    name: str
    index: int


class Vocabulary:
    """Ordered, append-only list of concept names."""

    def __init__(self, names: Sequence[str] = DEFAULT_VOCABULARY):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate concept names in {names}")
        self._names = names

    def __len__(self):
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __contains__(self, name):
        return name in self._names

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._names == other._names

    def __repr__(self):
        return f"Vocabulary({self._names!r})"

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def label(self, name: str) -> ConceptLabel:
        if name not in self._names:
            raise KeyError(f"unknown concept {name!r}; vocabulary is {self._names}")
        return ConceptLabel(name, self._names.index(name))

    def extended(self, name: str) -> "Vocabulary":
        if name in self._names:
            raise ValueError(f"concept {name!r} already in vocabulary")
        return Vocabulary(self._names + [name])


@dataclass
class PerturbSpec:
    noise_sigma_range: tuple = (0.005, 0.02)  # fraction of diameter
    pose_rot_range: tuple = (float(np.deg2rad(10.0)), float(np.deg2rad(30.0)))
    pose_trans_range: tuple = (0.05, 0.15)  # fraction of diameter
    overlap_keep_range: tuple = (0.4, 0.7)
    seed: int = 0

    def __post_init__(self):
        limits = {
            "noise_sigma_range": (0.0, 1.0),
            "pose_rot_range": (0.0, np.pi),
            "pose_trans_range": (0.0, 1.0),
            "overlap_keep_range": (0.0, 1.0),
        }
        for name, (lo, hi) in limits.items():
            rng = tuple(float(v) for v in getattr(self, name))
            if len(rng) != 2 or not (lo < rng[0] <= rng[1] <= hi):
                raise ValueError(f"{name}={rng} must be ordered within ({lo}, {hi}]")
            setattr(self, name, rng)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class LabeledPair:
    source: PointCloud
    target: PointCloud
    label: ConceptLabel
    # perturbation applied to the base; a perfect registration recovers its inverse
    truth_transform: RigidTransform = field(default_factory=RigidTransform.identity)
    # applied parameters; the two unused slots stay None
    provenance: dict = field(default_factory=dict)


def perturb_noise(cloud: PointCloud, sigma: float, rng: np.random.Generator) -> PointCloud:
    """Add i.i.d. N(0, sigma^2 I) jitter to every point. Normals are dropped."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return PointCloud(cloud.points + rng.normal(scale=sigma, size=cloud.points.shape))


def perturb_pose(cloud: PointCloud, rot_range, trans_range, rng: np.random.Generator):
    """Move the cloud by a random rigid transform; returns (cloud, transform)."""
    t = random_rigid_transform(rot_range[1], trans_range[1], rng,
                               rot_min=rot_range[0], trans_min=trans_range[0])
    return apply_transform(cloud, t), t


def crop_direction(rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def perturb_overlap(cloud: PointCloud, keep_fraction: float, rng: np.random.Generator,
                    return_direction: bool = False):
    """Half-space crop keeping ``round(keep_fraction * N)`` points.

    Points are sorted by their projection on a random direction and the
    highest-projecting ones are removed, so the kept set is the part of the
    cloud on one side of a plane.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    n = len(cloud)
    keep = int(round(keep_fraction * n))
    if keep < 10:
        raise ValueError("overlap crop too aggressive")
    direction = crop_direction(rng)
    order = np.argsort(cloud.points @ direction, kind="stable")
    kept = np.sort(order[:keep])
    out = cloud.subset(kept)
    if return_direction:
        return out, direction
    return out


def _draw(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def make_pair(base: PointCloud, concept: str, spec: PerturbSpec, rng: np.random.Generator,
              vocabulary: Optional[Vocabulary] = None, base_name: str = "", diameter=None) -> LabeledPair:
    vocabulary = vocabulary or Vocabulary()
    diameter = diameter if diameter is not None else base.diameter()
    prov = {"base": base_name, "diameter": diameter,
            "noise_sigma": None, "pose_transform": None, "overlap_keep": None}
    truth = RigidTransform.identity()
    if concept == "noise":
        sigma = _draw(rng, *spec.noise_sigma_range) * diameter
        source = perturb_noise(base, sigma, rng)
        prov["noise_sigma"] = sigma
    elif concept == "pose":
        trans = tuple(f * diameter for f in spec.pose_trans_range)
        source, truth = perturb_pose(base, spec.pose_rot_range, trans, rng)
        prov["pose_transform"] = truth.to_list()
    elif concept == "overlap":
        keep = _draw(rng, *spec.overlap_keep_range)
        source, direction = perturb_overlap(base, keep, rng, return_direction=True)
        prov["overlap_keep"] = keep
        prov["overlap_direction"] = [float(v) for v in direction]
    else:
        raise ValueError(f"no perturbation defined for concept {concept!r}")
    return LabeledPair(source, base, vocabulary.label(concept), truth, prov)


def synth_dataset(bases: Sequence[PointCloud], per_concept: int, spec: Optional[PerturbSpec] = None,
                  base_names: Optional[Sequence[str]] = None,
                  vocabulary: Optional[Vocabulary] = None) -> list[LabeledPair]:
    """Balanced, deterministically shuffled set of single-perturbation pairs.

    Sample ``i`` draws from its own generator seeded by ``(spec.seed, i)``, so
    samples can be produced in any order or in parallel with identical output.
    """
    spec = spec or PerturbSpec()
    vocabulary = vocabulary or Vocabulary()
    if not bases:
        raise ValueError("need at least one base cloud")
    if per_concept < 1:
        raise ValueError("per_concept must be at least 1")
    base_names = list(base_names) if base_names else [f"base{i}" for i in range(len(bases))]
    diameters = [b.diameter() for b in bases]
    concepts = [c for c in vocabulary.names for _ in range(per_concept)]
    order = np.random.default_rng([spec.seed, 0xD5]).permutation(len(concepts))
    pairs = []
    for i, j in enumerate(order):
        rng = np.random.default_rng([spec.seed, i])
        b = int(rng.integers(len(bases)))
        pairs.append(make_pair(bases[b], concepts[j], spec, rng, vocabulary, base_names[b], diameters[b]))
    return pairs
