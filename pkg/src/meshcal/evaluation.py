"""Evaluation metrics, Monte Carlo cross-validation, and synthetic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .errors import BehindCamera, DegenerateTag, InsufficientConfigurations
from .kinematics import RobotModel, forward_kinematics, pose_model_cloud
from .registration import RegistrationConfig, register
from .sensing import CameraIntrinsics, ObservedCloud, fuse_clouds

DEFAULT_SUCCESS_THRESHOLD_MM = 25.0
DEFAULT_TAG_SIZE_M = 0.05

# rigid mount of the virtual tag on the last link (synthetic scenes)
TAG_MOUNT = lg.Pose(np.eye(3), np.array([0.0, 0.0, 0.05]))


@dataclass(frozen=True, eq=False)
class TagObservation:
    config_index: int
    detected_center_px: np.ndarray   # (2,)
    detected_corners_px: np.ndarray  # (4, 2) ordered around the quad
    tag_size: float                  # meters
    tag_in_base: lg.Pose

    def to_dict(self) -> dict:
        return {
            "config_index": self.config_index,
            "center": self.detected_center_px.tolist(),
            "corners": self.detected_corners_px.tolist(),
            "tag_size": self.tag_size,
            "tag_in_base": self.tag_in_base.matrix().tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "TagObservation":
        return cls(
            config_index=int(data["config_index"]),
            detected_center_px=np.asarray(data["center"], dtype=float),
            detected_corners_px=np.asarray(data["corners"], dtype=float).reshape(4, 2),
            tag_size=float(data["tag_size"]),
            tag_in_base=lg.Pose.from_matrix(np.asarray(data["tag_in_base"])),
        )


@dataclass(frozen=True)
class EvalResult:
    mpd_px_mean: float
    mpd_px_std: float
    task_err_mm_mean: float
    task_err_mm_std: float
    success: bool


@dataclass(frozen=True)
class CrossValidationSummary:
    """Aggregated metrics for one calibration-set size."""

    n: int
    repeats: tuple[EvalResult, ...]
    task_errors_mm: tuple[np.ndarray, ...]  # per-repeat raw held-out errors
    pixel_errors: tuple[np.ndarray, ...]
    task_err_mm_mean: float
    task_err_mm_std: float
    mpd_px_mean: float
    mpd_px_std: float
    success_rate: float


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    true_pose: lg.Pose  # robot base in camera frame
    qs: tuple
    observed: ObservedCloud
    tag_obs: tuple[TagObservation, ...]
    intrinsics: CameraIntrinsics


@dataclass(frozen=True, eq=False)
class CalibrationDataset:
    """Per-configuration clouds and tag observations ready for evaluation."""

    model: RobotModel
    qs: tuple
    clouds: tuple          # per-config (Mc, 3) camera-frame points
    tag_obs: tuple[TagObservation, ...]
    intrinsics: CameraIntrinsics
    reg_config: RegistrationConfig = field(default_factory=RegistrationConfig)

    @classmethod
    def from_scene(cls, model: RobotModel, scene: SyntheticScene,
                   reg_config: RegistrationConfig | None = None) -> "CalibrationDataset":
        clouds = tuple(scene.observed.per_config(c) for c in range(len(scene.qs)))
        return cls(model, tuple(scene.qs), clouds, scene.tag_obs, scene.intrinsics,
                   reg_config or RegistrationConfig())

    @property
    def n_configs(self) -> int:
        return len(self.qs)


def reproject_tag(pose: lg.Pose, tag: TagObservation, K: CameraIntrinsics) -> np.ndarray:
    """Project the model tag center through the calibrated pose into pixels."""
    center_cam = lg.apply(pose, tag.tag_in_base.translation)
    if center_cam[2] <= 0:
        raise BehindCamera(f"tag center at z = {center_cam[2]:.4f} m")
    return K.project(center_cam)


def mpd(reprojected, detected):
    """Mean and population std of per-point pixel distances."""
    reprojected = np.asarray(reprojected, dtype=float).reshape(-1, 2)
    detected = np.asarray(detected, dtype=float).reshape(-1, 2)
    if len(reprojected) != len(detected) or len(reprojected) == 0:
        raise ValueError("need equal, nonzero numbers of points")
    distances = np.linalg.norm(reprojected - detected, axis=1)
    return float(distances.mean()), float(distances.std())


def _tag_edge_basis(corners: np.ndarray) -> np.ndarray:
    """2x2 matrix whose columns are the averaged opposite-edge vectors."""
    c0, c1, c2, c3 = corners
    e1 = 0.5 * ((c1 - c0) + (c2 - c3))
    e2 = 0.5 * ((c3 - c0) + (c2 - c1))
    return np.column_stack([e1, e2])


def tag_centric_error(pose: lg.Pose, tag: TagObservation, K: CameraIntrinsics) -> float:
    """Reprojection error in millimeters, rescaled by the detected tag extent."""
    basis = _tag_edge_basis(tag.detected_corners_px)
    if abs(np.linalg.det(basis)) < 1e-6:
        raise DegenerateTag("tag corners are (nearly) collinear")
    displacement = reproject_tag(pose, tag, K) - tag.detected_center_px
    coords = np.linalg.solve(basis, displacement)  # units of one tag edge
    return float(np.linalg.norm(coords) * tag.tag_size * 1000.0)


def classify_success(task_err_mm: float, threshold_mm: float = DEFAULT_SUCCESS_THRESHOLD_MM) -> bool:
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    return task_err_mm <= threshold_mm


def evaluate_pose(pose: lg.Pose, dataset: CalibrationDataset, config_indices,
                  threshold_mm: float = DEFAULT_SUCCESS_THRESHOLD_MM) -> EvalResult:
    """Tag metrics for one pose over the given configuration subset."""
    indices = set(int(i) for i in config_indices)
    tags = [t for t in dataset.tag_obs if t.config_index in indices]
    if not tags:
        raise InsufficientConfigurations("no tag observations for the requested configurations")
    reproj = [reproject_tag(pose, t, dataset.intrinsics) for t in tags]
    detected = [t.detected_center_px for t in tags]
    px_mean, px_std = mpd(reproj, detected)
    task = np.array([tag_centric_error(pose, t, dataset.intrinsics) for t in tags])
    return EvalResult(px_mean, px_std, float(task.mean()), float(task.std()),
                      classify_success(float(task.mean()), threshold_mm))


def pooled_mean_std(means, stds):
    """Combine per-repeat (mean, std) pairs: sqrt(mean of variances + variance of means)."""
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    combined_mean = float(means.mean())
    combined_std = float(np.sqrt((stds ** 2).mean() + means.var()))
    return combined_mean, combined_std


def monte_carlo_cv(dataset: CalibrationDataset, sizes=(3, 6, 9, 12), repeats: int = 5,
                   seed: int = 0, threshold_mm: float = DEFAULT_SUCCESS_THRESHOLD_MM,
                   ) -> dict[int, CrossValidationSummary]:
    """Repeated random calibration/validation splits over configurations.

    Each repeat owns an RNG stream derived from (seed, size, repeat), so
    results are independent of execution order.
    """
    n = dataset.n_configs
    if n < max(sizes) + 1:
        raise InsufficientConfigurations(
            f"need at least {max(sizes) + 1} configurations, have {n}")
    summaries = {}
    for size in sizes:
        repeat_results, task_raw, px_raw = [], [], []
        for r in range(repeats):
            rng = np.random.default_rng([seed, size, r])
            train = np.sort(rng.choice(n, size=size, replace=False))
            held_out = np.setdiff1d(np.arange(n), train)
            pose = calibrate_subset(dataset, train)
            tags = [t for t in dataset.tag_obs if t.config_index in set(held_out.tolist())]
            reproj = [reproject_tag(pose, t, dataset.intrinsics) for t in tags]
            detected = [t.detected_center_px for t in tags]
            px = np.linalg.norm(np.asarray(reproj) - np.asarray(detected), axis=1)
            task = np.array([tag_centric_error(pose, t, dataset.intrinsics) for t in tags])
            repeat_results.append(EvalResult(
                float(px.mean()), float(px.std()), float(task.mean()), float(task.std()),
                classify_success(float(task.mean()), threshold_mm)))
            task_raw.append(task)
            px_raw.append(px)
        task_mean, task_std = pooled_mean_std(
            [e.task_err_mm_mean for e in repeat_results],
            [e.task_err_mm_std for e in repeat_results])
        px_mean, px_std = pooled_mean_std(
            [e.mpd_px_mean for e in repeat_results],
            [e.mpd_px_std for e in repeat_results])
        summaries[size] = CrossValidationSummary(
            n=size, repeats=tuple(repeat_results),
            task_errors_mm=tuple(task_raw), pixel_errors=tuple(px_raw),
            task_err_mm_mean=task_mean, task_err_mm_std=task_std,
            mpd_px_mean=px_mean, mpd_px_std=px_std,
            success_rate=float(np.mean([e.success for e in repeat_results])))
    return summaries


def calibrate_subset(dataset: CalibrationDataset, config_indices) -> lg.Pose:
    """Run registration on a subset of configurations; returns base-in-camera pose."""
    qs = [dataset.qs[i] for i in config_indices]
    observed = fuse_clouds([dataset.clouds[i] for i in config_indices])
    report = register(dataset.model, qs, observed, dataset.reg_config)
    return report.pose


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=620.0, fy=620.0, cx=639.5, cy=359.5, width=1280, height=720)


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera axes in the base frame: z toward target, x right, y down-ish."""
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def generate_synthetic_scene(model: RobotModel, n_configs: int, noise_mm: float = 0.0,
                             outlier_frac: float = 0.0, seed: int = 0,
                             points_per_config: int = 250,
                             intrinsics: CameraIntrinsics | None = None,
                             tag_size: float = DEFAULT_TAG_SIZE_M) -> SyntheticScene:
    """Ground-truth scene: random camera pose, sampled joint vectors, noisy clouds.

    Observed points are drawn from the visible hemisphere of the link
    surfaces (normal facing the camera), transformed into the camera frame,
    perturbed with isotropic Gaussian noise, and a fraction replaced by
    uniform clutter in a 10-20 cm shell around their true locations. Tag
    detections are synthesized noise-free from a virtual tag on the last link.
    """
    if noise_mm < 0 or not 0 <= outlier_frac < 1:
        raise ValueError("invalid noise or outlier fraction")
    K = intrinsics or default_intrinsics()
    rng = np.random.default_rng(seed)

    movable = model.non_fixed_joints
    lows = np.array([j.limits[0] for j in movable])
    highs = np.array([j.limits[1] for j in movable])
    lows = np.where(np.isfinite(lows), lows, -np.pi)
    highs = np.where(np.isfinite(highs), highs, np.pi)
    qs = [rng.uniform(lows, highs) for _ in range(n_configs)]

    # observed-side surface sampling uses a seed stream disjoint from the
    # one the registration pipeline uses for its model clouds
    model_clouds = [
        pose_model_cloud(model, q, samples_per_link=4 * points_per_config,
                         seed=int(rng.integers(1 << 31)))
        for q in qs]

    all_points = np.vstack([c.points for c in model_clouds])
    target = all_points.mean(axis=0)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = rng.uniform(np.radians(15.0), np.radians(60.0))
    distance = rng.uniform(0.8, 2.0)
    offset = distance * np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation)])
    cam_pos = target + offset
    base_from_camera = lg.Pose(_look_at_rotation(cam_pos, target), cam_pos)
    true_pose = lg.inverse(base_from_camera)  # base in camera frame

    per_config = []
    for cloud in model_clouds:
        facing = np.einsum("ij,ij->i", cloud.normals, cam_pos - cloud.points) > 0
        pts = cloud.points[facing]
        if len(pts) > points_per_config:
            pts = pts[rng.choice(len(pts), size=points_per_config, replace=False)]
        cam_pts = lg.apply(true_pose, pts)
        if noise_mm > 0:
            cam_pts = cam_pts + rng.normal(scale=noise_mm / 1000.0, size=cam_pts.shape)
        n_out = int(round(outlier_frac * len(cam_pts)))
        if n_out > 0:
            which = rng.choice(len(cam_pts), size=n_out, replace=False)
            direction = rng.normal(size=(n_out, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radius = rng.uniform(0.10, 0.20, size=n_out)
            cam_pts[which] = cam_pts[which] + direction * radius[:, None]
        per_config.append(cam_pts)

    tag_obs = []
    last_link = model.joints[-1].child if model.joints else model.root
    half = tag_size / 2.0
    corner_local = np.array([
        [-half, -half, 0.0], [half, -half, 0.0],
        [half, half, 0.0], [-half, half, 0.0]])
    for c, q in enumerate(qs):
        fk = forward_kinematics(model, q)
        tag_in_base = lg.compose(fk[last_link], TAG_MOUNT)
        tag_to_cam = lg.compose(true_pose, tag_in_base)
        center_px = K.project(lg.apply(true_pose, tag_in_base.translation))
        corners_px = K.project(lg.apply(tag_to_cam, corner_local))
        tag_obs.append(TagObservation(c, center_px, corners_px, tag_size, tag_in_base))

    return SyntheticScene(true_pose, tuple(qs), fuse_clouds(per_config),
                          tuple(tag_obs), K)
