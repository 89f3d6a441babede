"""Point-to-point ICP and a restart-based registration uncertainty."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import KdTree, PointCloud, RigidTransform, compose, invert, random_rigid_transform

UNCERTAINTY_SENTINEL = sys.float_info.max
REGULARIZER = 1e-9


class RegistrationDiverged(RuntimeError):
    """No correspondences survived the distance gate."""

    def __init__(self, message: str, last_pose: RigidTransform, iterations: int = 0):
        super().__init__(message)
        self.last_pose = last_pose
        self.iterations = iterations


@dataclass
class IcpParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    # None -> 0.5 x target diameter
    max_correspondence_dist: Optional[float] = None
    restarts_for_uncertainty: int = 8
    restart_rotation: float = float(np.deg2rad(5.0))
    # None -> 0.02 x target diameter
    restart_translation: Optional[float] = None
    sigma_rotation: float = float(np.deg2rad(0.5))
    # None -> 1e-3 x target diameter
    sigma_translation: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        for name in ("max_correspondence_dist", "restart_translation", "sigma_translation"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive")
        if self.restart_rotation < 0 or self.sigma_rotation <= 0:
            raise ValueError("rotation scales must be positive")
        if self.restarts_for_uncertainty < 1:
            raise ValueError("restarts_for_uncertainty must be positive")

    def resolved(self, diameter: float) -> "IcpParams":
        """Copy with diameter-relative defaults filled in."""
        return IcpParams(
            max_iterations=self.max_iterations,
            convergence_tol=self.convergence_tol,
            max_correspondence_dist=self.max_correspondence_dist or 0.5 * diameter,
            restarts_for_uncertainty=self.restarts_for_uncertainty,
            restart_rotation=self.restart_rotation,
            restart_translation=self.restart_translation or 0.02 * diameter,
            sigma_rotation=self.sigma_rotation,
            sigma_translation=self.sigma_translation or 1e-3 * diameter,
            seed=self.seed,
        )


@dataclass
class RegistrationResult:
    transform: RigidTransform
    rmse: float
    iterations: int
    converged: bool
    uncertainty: float = 0.0
    restart_poses: list = field(default_factory=list)
    # False when u is the sentinel (fewer than two restarts survived)
    uncertainty_valid: bool = True
    diverged_restarts: int = 0


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping ``src`` rows onto ``dst`` rows."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cd - R @ cs)


def icp_register(source: PointCloud, target: PointCloud, t0: Optional[RigidTransform] = None,
                 params: Optional[IcpParams] = None, tree: Optional[KdTree] = None,
                 target_diameter: Optional[float] = None) -> RegistrationResult:
    """Refine ``t0`` so that ``source`` lands on ``target``.

    Each iteration matches every transformed source point to its nearest
    target point, drops pairs farther than the correspondence gate and solves
    the rigid alignment of the survivors in closed form. Stops once the RMSE
    changes by less than ``convergence_tol``.
    """
    params = params or IcpParams()
    t0 = t0 or RigidTransform.identity()
    if params.max_correspondence_dist is None:
        diameter = target_diameter if target_diameter is not None else target.diameter()
        params = params.resolved(diameter)
    tree = tree or KdTree(target)
    gate = params.max_correspondence_dist
    src = source.points
    tgt = target.points

    pose = t0
    prev_rmse = None
    converged = False
    rmse = 0.0
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = pose.apply(src)
        idx, dist = tree.nearest(moved, break_ties=False)
        inliers = dist <= gate
        if np.count_nonzero(inliers) < 3:
            raise RegistrationDiverged("registration diverged", pose, iterations)
        rmse = float(np.sqrt(np.mean(dist[inliers] ** 2)))
        if prev_rmse is not None and abs(prev_rmse - rmse) < params.convergence_tol:
            converged = True
            break
        if iterations == params.max_iterations:
            break
        step = kabsch(moved[inliers], tgt[idx[inliers]])
        pose = compose(step, pose)
        prev_rmse = rmse
    return RegistrationResult(pose, rmse, iterations, converged)


def _about_point(delta: RigidTransform, center: np.ndarray) -> RigidTransform:
    # rotate around ``center`` instead of the origin
    R = delta.rotation
    return RigidTransform(R, center - R @ center + delta.translation)


def relative_twist(reference: RigidTransform, pose: RigidTransform) -> np.ndarray:
    """Twist of ``reference^-1 * pose`` (axis-angle radians, meters)."""
    return compose(invert(reference), pose).twist()


def gaussian_kl(mu0, cov0, mu1, cov1) -> float:
    """KL(N(mu0, cov0) || N(mu1, cov1)) in nats."""
    k = len(mu0)
    L1 = np.linalg.cholesky(cov1)
    L0 = np.linalg.cholesky(cov0)
    A = np.linalg.solve(L1, L0)
    diff = np.linalg.solve(L1, np.asarray(mu1) - np.asarray(mu0))
    logdet1 = 2.0 * np.sum(np.log(np.diag(L1)))
    logdet0 = 2.0 * np.sum(np.log(np.diag(L0)))
    return 0.5 * (np.sum(A**2) + diff @ diff - k + logdet1 - logdet0)


def pose_dispersion_kl(twists: np.ndarray, sigma_rotation: float, sigma_translation: float) -> float:
    """Symmetric KL between the restart-pose Gaussian and the reference.

    The twists are fitted with N(mu, Sigma + 1e-9 I). That Gaussian is blurred by
    the reference covariance Sigma0 = diag(sigma_rot^2 x3, sigma_trans^2 x3) and
    compared with N(0, Sigma0), so perfect agreement between restarts gives the
    minimum (close to zero) and the value grows with spread and bias.
    """
    twists = np.atleast_2d(np.asarray(twists, float))
    mu = twists.mean(axis=0)
    centered = twists - mu
    cov = centered.T @ centered / len(twists) + REGULARIZER * np.eye(6)
    ref = np.diag([sigma_rotation**2] * 3 + [sigma_translation**2] * 3)
    blurred = cov + ref
    zero = np.zeros(6)
    return float(gaussian_kl(mu, blurred, zero, ref) + gaussian_kl(zero, ref, mu, blurred))


def registration_uncertainty(source: PointCloud, target: PointCloud,
                             t0: Optional[RigidTransform] = None,
                             params: Optional[IcpParams] = None):
    """Run ICP from ``t0`` and from J-1 perturbed starts; score their disagreement.

    Returns ``(result, u)`` where ``result`` is the t0-seeded registration with
    ``uncertainty`` and ``restart_poses`` filled in. Restarts that diverge are
    skipped; with fewer than two survivors ``u`` is the float max sentinel and
    ``result.uncertainty_valid`` is False.
    """
    params = params or IcpParams()
    t0 = t0 or RigidTransform.identity()
    J = params.restarts_for_uncertainty
    if J < 2:
        raise ValueError("uncertainty needs at least two restarts")
    diameter = target.diameter()
    params = params.resolved(diameter)
    tree = KdTree(target)
    rng = np.random.default_rng(params.seed)
    center = t0.apply(source.centroid())

    starts = [t0]
    for _ in range(J - 1):
        delta = random_rigid_transform(params.restart_rotation, params.restart_translation, rng)
        starts.append(compose(_about_point(delta, center), t0))

    results = []
    last_pose = t0
    for start in starts:
        try:
            results.append(icp_register(source, target, start, params, tree=tree))
        except RegistrationDiverged as err:
            last_pose = err.last_pose if not results else last_pose
            results.append(None)
    survivors = [r for r in results if r is not None]
    diverged = J - len(survivors)
    if len(survivors) < 2:
        if survivors:
            main = survivors[0]
        else:
            main = RegistrationResult(last_pose, UNCERTAINTY_SENTINEL, 0, False)
        main.uncertainty = UNCERTAINTY_SENTINEL
        main.uncertainty_valid = False
        main.diverged_restarts = diverged
        main.restart_poses = [relative_twist(main.transform, r.transform) for r in survivors]
        return main, UNCERTAINTY_SENTINEL

    main = survivors[0]
    twists = np.array([relative_twist(main.transform, r.transform) for r in survivors])
    u = pose_dispersion_kl(twists, params.sigma_rotation, params.sigma_translation)
    main.uncertainty = u
    main.restart_poses = [tw for tw in twists]
    main.diverged_restarts = diverged
    return main, u
