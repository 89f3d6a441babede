"""Point clouds, rigid transforms, nearest-neighbour search and normals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

_DEGENERATE_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An (N, 3) array of points in meters with optional unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        if pts.shape[0] < 1:
            raise ValueError("point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=float, copy=True).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in count")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise ValueError("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        """Largest pairwise point distance (rotation invariant)."""
        return cloud_diameter(self.points)

    def subset(self, idx) -> "PointCloud":
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)


def cloud_diameter(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    candidates = points
    if len(points) > 64:
        try:
            candidates = points[ConvexHull(points).vertices]
        except Exception:  # flat or collinear input, qhull refuses
            candidates = points
    if len(candidates) > 6000:
        # bounded memory for degenerate huge clouds
        rng = np.random.default_rng(0)
        candidates = candidates[rng.choice(len(candidates), 6000, replace=False)]
    return float(pdist(candidates).max())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float, copy=True).reshape(3, 3)
        t = np.array(self.translation, dtype=float, copy=True).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), translation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, float) @ self.rotation.T + self.translation

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def twist(self) -> np.ndarray:
        """6-vector (axis-angle rotation, translation)."""
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return np.concatenate([rv, self.translation])

    def to_list(self) -> list[float]:
        """Row-major R followed by t, 12 numbers."""
        return [float(v) for v in self.rotation.ravel()] + [float(v) for v in self.translation]

    @classmethod
    def from_list(cls, values) -> "RigidTransform":
        values = np.asarray(values, dtype=float)
        if values.shape != (12,):
            raise ValueError("transform needs exactly 12 numbers (R row-major, then t)")
        return cls(values[:9].reshape(3, 3), values[9:])

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    if normals is not None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(t.apply(cloud.points), normals)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first and then ``a``."""
    R = _orthonormalize(a.rotation @ b.rotation)
    return RigidTransform(R, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


class KdTree:
    """Exact Euclidean nearest-neighbour index over a point cloud."""

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, k: int = 1):
        if self._tree is None:
            raise ValueError("empty index")
        return self._tree.query(np.asarray(queries, float), k=k)

    def nearest(self, queries: np.ndarray, break_ties: bool = True):
        """Vectorised nearest neighbours; ties go to the lowest index.

        Returns ``(indices, distances)`` for an (M, 3) query array. With
        ``break_ties=False`` a single-neighbour query is used (faster, tie
        order unspecified).
        """
        if self._tree is None:
            raise ValueError("empty index")
        queries = np.atleast_2d(np.asarray(queries, float))
        k = min(4, len(self.points)) if break_ties else 1
        dist, idx = self._tree.query(queries, k=k)
        if k == 1:
            return idx.astype(int), dist
        # cKDTree does not promise an order among equidistant points
        best = dist[:, :1]
        tied = dist == best
        idx_masked = np.where(tied, idx, np.iinfo(np.int64).max)
        return idx_masked.min(axis=1).astype(int), dist[:, 0]


def nearest_neighbor(tree: KdTree, p) -> tuple[int, float]:
    idx, dist = tree.nearest(np.asarray(p, float).reshape(1, 3))
    return int(idx[0]), float(dist[0])


def estimate_normals(cloud: PointCloud, k: int = 10, return_degenerate: bool = False):
    """PCA normals from the k nearest neighbours of every point.

    Each normal is oriented to point away from the cloud centroid. Points whose
    neighbourhood has no spread get the fixed normal (0, 0, 1) and are reported
    in the degenerate mask when ``return_degenerate`` is set.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("need k >= 3 neighbours for a normal")
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    pts = cloud.points
    _, nbr = KdTree(cloud).query(pts, k=k)
    neigh = pts[nbr]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], 0.0)
    # zero-spread neighbourhood: eigenvector is meaningless
    degenerate = scale <= 1e-24
    normals[degenerate] = _DEGENERATE_NORMAL
    outward = pts - cloud.centroid()
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    flip &= ~degenerate
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    out = PointCloud(pts, normals)
    if return_degenerate:
        return out, degenerate
    return out


def random_rigid_transform(rot_max: float, trans_max: float, rng: np.random.Generator,
                           rot_min: float = 0.0, trans_min: float = 0.0) -> RigidTransform:
    """Axis uniform on the sphere, angle uniform in [rot_min, rot_max],
    translation uniform in the ball (or shell) of radius trans_max."""
    if not 0.0 <= rot_min <= rot_max <= np.pi:
        raise ValueError("rotation range must satisfy 0 <= rot_min <= rot_max <= pi")
    if not 0.0 <= trans_min <= trans_max:
        raise ValueError("translation range must satisfy 0 <= trans_min <= trans_max")
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(rot_min, rot_max)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    # radius density ~ r^2 inside the ball
    u = rng.uniform()
    radius = (trans_min**3 + u * (trans_max**3 - trans_min**3)) ** (1.0 / 3.0)
    return RigidTransform(Rotation.from_rotvec(axis * angle).as_matrix(), direction * radius)

