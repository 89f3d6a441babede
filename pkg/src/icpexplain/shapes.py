"""Procedural base clouds used as desk-scale fixtures (units: meters)."""
from __future__ import annotations

import numpy as np

from .geometry import PointCloud


def sphere(n: int = 2000, radius: float = 1.0, seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(radius * v)


def box(n: int = 2000, size=(1.6, 1.0, 0.6), seed: int = 0) -> PointCloud:
    """Points on the surface of an axis-aligned box, area-weighted per face."""
    rng = np.random.default_rng(seed)
    a, b, c = (s / 2.0 for s in size)
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    for f, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]):
        m = face == f
        others = [i for i in range(3) if i != axis]
        half = np.array([a, b, c])
        pts[m, axis] = sign * half[axis]
        pts[m, others[0]] = uv[m, 0] * half[others[0]]
        pts[m, others[1]] = uv[m, 1] * half[others[1]]
    return PointCloud(pts)


def cylinder(n: int = 2000, radius: float = 0.5, height: float = 1.5, seed: int = 0) -> PointCloud:
    """Open cylinder around the z axis (rotationally symmetric about z)."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    z = rng.uniform(-height / 2, height / 2, n)
    return PointCloud(np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z]))


def bunny(n: int = 2000, seed: int = 0) -> PointCloud:
    """Lumpy asymmetric blob: body, head and two ears, all ellipsoid surfaces."""
    rng = np.random.default_rng(seed)
    parts = [
        # center, radii, share of points
        ((0.0, 0.0, 0.0), (0.8, 0.55, 0.5), 0.55),
        ((0.7, 0.0, 0.45), (0.35, 0.3, 0.3), 0.2),
        ((0.8, 0.12, 0.95), (0.08, 0.06, 0.3), 0.1),
        ((0.65, -0.12, 0.9), (0.08, 0.06, 0.28), 0.1),
        ((-0.75, 0.0, 0.1), (0.15, 0.15, 0.15), 0.05),
    ]
    shares = np.array([p[2] for p in parts])
    counts = np.floor(shares / shares.sum() * n).astype(int)
    counts[0] += n - counts.sum()
    chunks = []
    for (center, radii, _), m in zip(parts, counts):
        v = rng.normal(size=(m, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        chunks.append(np.asarray(center) + v * np.asarray(radii))
    pts = np.concatenate(chunks)
    return PointCloud(pts - pts.mean(axis=0))


BUILTIN = {"sphere": sphere, "box": box, "cylinder": cylinder, "bunny": bunny}


def builtin(name: str, n: int = 2000, seed: int = 0) -> PointCloud:
    try:
        factory = BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown built-in shape {name!r}; choose from {sorted(BUILTIN)}") from None
    return factory(n=n, seed=seed)
