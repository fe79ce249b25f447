"""Robust point-to-plane ICP on SE(3) with IRLS/Huber weighting.

The unknown theta maps observed camera-frame points into the robot base
frame, i.e. the residual for a correspondence (m, n, o) is n . (theta o - m).
The reported calibration pose is the inverse (robot base in camera frame).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import liegroup as lg
from .errors import DegenerateCentroids, IllConditioned, TooFewCorrespondences
from .kinematics import PosedModelCloud, RobotModel, pose_model_cloud
from .sensing import ObservedCloud

HUBER_FACTOR = 1.345
MAD_TO_SIGMA = 0.6745
MIN_CORRESPONDENCES = 6


@dataclass(frozen=True)
class RegistrationConfig:
    inner_tol: float = 1e-7
    max_inner: int = 20
    outer_tol: float = 1e-6
    max_outer: int = 50
    # correspondence rejection distance anneals from start toward floor
    reject_start: float = 0.10
    reject_decay: float = 0.7
    reject_floor: float = 0.01
    samples_per_link: int = 2000
    stride: int = 2
    band_px: int = 3
    seed: int = 0
    residual_threshold: float = 0.005
    huber_factor: float = HUBER_FACTOR
    initial_pose: lg.Pose | None = field(default=None)  # base in camera frame

    @classmethod
    def from_json(cls, path) -> "RegistrationConfig":
        data = json.loads(Path(path).read_text())
        initial = data.pop("initial_pose", None)
        config = cls(**data)
        if initial is not None:
            config = replace(config, initial_pose=lg.Pose.from_matrix(np.asarray(initial)))
        return config

    def to_json(self, path) -> None:
        data = {k: v for k, v in self.__dict__.items() if k != "initial_pose"}
        if self.initial_pose is not None:
            data["initial_pose"] = self.initial_pose.matrix().tolist()
        Path(path).write_text(json.dumps(data, indent=2) + "\n")


@dataclass(frozen=True)
class CorrespondenceSet:
    model_points: np.ndarray    # (N, 3) base frame
    model_normals: np.ndarray   # (N, 3) unit
    observed_points: np.ndarray  # (N, 3) camera frame
    distances: np.ndarray       # (N,) meters at the building theta

    def __len__(self):
        return len(self.distances)


@dataclass(frozen=True)
class IrlsSystem:
    A: np.ndarray  # (N, 6) rows n^T Theta D(o)
    B: np.ndarray  # (N,)   entries n . (m - Theta o)
    W: np.ndarray  # (N,)   weights in (0, 1]


@dataclass(frozen=True)
class RegistrationReport:
    pose: lg.Pose  # robot base in camera frame
    iterations_outer: int
    iterations_inner_total: int
    final_median_residual: float
    converged: bool
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.matrix().tolist(),
            "iterations_outer": self.iterations_outer,
            "iterations_inner_total": self.iterations_inner_total,
            "final_median_residual": self.final_median_residual,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


def initialize_centroid_kabsch(model_clouds, observed: ObservedCloud) -> lg.Pose:
    """Procrustes alignment of per-configuration centroids.

    Returns theta mapping observed (camera) points into the base frame.
    """
    model_centroids = np.array([cloud.centroid for cloud in model_clouds])
    observed_centroids = np.array([
        observed.per_config(c).mean(axis=0) for c in range(len(model_clouds))])
    centered = observed_centroids - observed_centroids.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
        raise DegenerateCentroids(
            "configuration centroids are collinear or coincident; "
            "use more varied configurations")
    return kabsch(observed_centroids, model_centroids)


def kabsch(source: np.ndarray, target: np.ndarray) -> lg.Pose:
    """Rigid transform mapping source points onto target points (SVD, reflection-safe)."""
    src_c = source.mean(axis=0)
    tgt_c = target.mean(axis=0)
    H = (source - src_c).T @ (target - tgt_c)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return lg.Pose(R, tgt_c - R @ src_c)


def brute_force_nearest(model_points: np.ndarray, queries: np.ndarray):
    """O(N^2) exact nearest neighbors; ties broken by lowest model index."""
    diff = queries[:, None, :] - model_points[None, :, :]
    d2 = np.einsum("qnk,qnk->qn", diff, diff)
    idx = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index on ties
    return idx, np.sqrt(d2[np.arange(len(queries)), idx])


def build_model_trees(model_clouds) -> list[cKDTree]:
    return [cKDTree(cloud.points) for cloud in model_clouds]


def find_correspondences(model_clouds, observed: ObservedCloud, theta: lg.Pose,
                         reject_dist: float, trees=None) -> CorrespondenceSet:
    """Match each observed point to the nearest model point of its own configuration."""
    if reject_dist <= 0:
        raise ValueError("reject_dist must be positive")
    if trees is None:
        trees = build_model_trees(model_clouds)
    m_pts, m_nrm, o_pts, dists = [], [], [], []
    for c, (cloud, tree) in enumerate(zip(model_clouds, trees)):
        obs = observed.per_config(c)
        if len(obs) == 0:
            continue
        transformed = lg.apply(theta, obs)
        dist, idx = tree.query(transformed)
        keep = dist <= reject_dist
        m_pts.append(cloud.points[idx[keep]])
        m_nrm.append(cloud.normals[idx[keep]])
        o_pts.append(obs[keep])
        dists.append(dist[keep])
    total = sum(len(d) for d in dists)
    if total < MIN_CORRESPONDENCES:
        raise TooFewCorrespondences(
            f"only {total} correspondences within {reject_dist:.4f} m")
    return CorrespondenceSet(np.vstack(m_pts), np.vstack(m_nrm),
                             np.vstack(o_pts), np.concatenate(dists))


def assemble_system(corr: CorrespondenceSet, theta: lg.Pose) -> IrlsSystem:
    """Linearized point-to-plane system A dtheta = B at the current estimate."""
    n = corr.model_normals
    o = corr.observed_points
    transformed = lg.apply(theta, o)
    nR = n @ theta.rotation  # rows n^T R
    # a = n^T R [-o_x, I]:  rotation block row is -(n^T R) o_x = o x (R^T n)
    rot_block = np.cross(o, nR)
    A = np.hstack([rot_block, nR])
    B = np.einsum("ij,ij->i", n, corr.model_points - transformed)
    return IrlsSystem(A, B, np.ones(len(B)))


def mad_sigma(B) -> float:
    """Robust noise scale: median absolute deviation over 0.6745."""
    B = np.asarray(B, dtype=float)
    return float(np.median(np.abs(B - np.median(B))) / MAD_TO_SIGMA)


def huber_weights(B, kappa: float) -> np.ndarray:
    """Huber IRLS weights; kappa = 0 degenerates to ordinary least squares."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    B = np.asarray(B, dtype=float)
    if kappa == 0.0:
        return np.ones(len(B))
    w = np.ones(len(B))
    absb = np.abs(B)
    out = absb > kappa
    w[out] = kappa / absb[out]
    return w


def huber_loss(B, kappa: float) -> float:
    """Huber objective matching the weights above (for descent checks)."""
    B = np.asarray(B, dtype=float)
    if kappa == 0.0:
        return float(0.5 * np.sum(B * B))
    absb = np.abs(B)
    quad = 0.5 * np.minimum(absb, kappa) ** 2
    lin = kappa * (absb - kappa / 2.0)
    return float(np.sum(np.where(absb <= kappa, quad, lin)))


def solve_weighted_step(system: IrlsSystem) -> lg.Twist:
    """Solve the weighted normal equations A^T W A dtheta = A^T W B.

    W enters the quadratic form linearly, which is the weighting that makes
    IRLS with Huber weights a majorize-minimize scheme on the Huber loss.
    """
    WA = system.A * system.W[:, None]
    M = system.A.T @ WA
    rhs = WA.T @ system.B
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("weighted normal matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if pivots.max() > 1e12 * pivots.min():
        raise IllConditioned(
            f"pivot ratio {pivots.max() / pivots.min():.3e} exceeds 1e12")
    y = np.linalg.solve(L, rhs)
    return lg.Twist.from_vector(np.linalg.solve(L.T, y))


def irls_inner_loop(corr: CorrespondenceSet, theta0: lg.Pose, max_inner: int = 20,
                    tol: float = 1e-7, huber_factor: float = HUBER_FACTOR):
    """Repeated reweighted solves at fixed correspondences.

    Returns (theta, iterations).
    """
    theta = theta0
    for iteration in range(1, max_inner + 1):
        system = assemble_system(corr, theta)
        kappa = huber_factor * mad_sigma(system.B)
        weights = huber_weights(system.B, kappa)
        step = solve_weighted_step(IrlsSystem(system.A, system.B, weights))
        theta = lg.compose(theta, lg.exp_se3(step))
        if step.norm < tol:
            return theta, iteration
    return theta, max_inner


def register(model: RobotModel, qs, observed: ObservedCloud,
             config: RegistrationConfig = RegistrationConfig()) -> RegistrationReport:
    """Outer/inner ICP loop: correspondence search alternated with IRLS solves."""
    start = time.perf_counter()
    model_clouds = [
        pose_model_cloud(model, q, config.samples_per_link, seed=config.seed)
        for q in qs]
    trees = build_model_trees(model_clouds)

    if config.initial_pose is not None:
        theta = lg.inverse(config.initial_pose)
    else:
        theta = initialize_centroid_kabsch(model_clouds, observed)

    inner_total = 0
    outer = 0
    converged_outer = False
    theta_prev2 = None
    for outer in range(1, config.max_outer + 1):
        reject = max(config.reject_floor,
                     config.reject_start * config.reject_decay ** (outer - 1))
        try:
            corr = find_correspondences(model_clouds, observed, theta, reject, trees)
        except TooFewCorrespondences:
            if outer == 1:
                raise
            break  # annealing starved the matcher: report non-convergence
        theta_new, inner = irls_inner_loop(
            corr, theta, config.max_inner, config.inner_tol, config.huber_factor)
        inner_total += inner
        change = lg.log_se3(lg.compose(lg.inverse(theta), theta_new)).norm
        # correspondence sets can alternate between two assignments; compare
        # against the pose two outer iterations back to catch that limit cycle
        change2 = (lg.log_se3(lg.compose(lg.inverse(theta_prev2), theta_new)).norm
                   if theta_prev2 is not None else np.inf)
        theta_prev2 = theta
        theta = theta_new
        if min(change, change2) < config.outer_tol and reject <= config.reject_floor:
            converged_outer = True
            break

    # alignment quality over the full observation, no rejection
    residuals = []
    for c, tree in enumerate(trees):
        obs = observed.per_config(c)
        if len(obs):
            dist, _ = tree.query(lg.apply(theta, obs))
            residuals.append(dist)
    median_residual = float(np.median(np.concatenate(residuals)))
    converged = converged_outer and median_residual <= config.residual_threshold
    return RegistrationReport(
        pose=lg.inverse(theta),
        iterations_outer=outer,
        iterations_inner_total=inner_total,
        final_median_residual=median_residual,
        converged=converged,
        wall_time=time.perf_counter() - start,
    )
