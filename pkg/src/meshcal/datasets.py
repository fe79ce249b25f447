"""On-disk dataset layout: manifest JSON plus per-configuration files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import liegroup as lg
from .errors import ManifestError
from .evaluation import CalibrationDataset, SyntheticScene, TagObservation
from .kinematics import RobotModel, parse_robot
from .registration import RegistrationConfig
from .sensing import (CameraIntrinsics, ObservedCloud, depth_to_cloud, erode_to_boundary,
                      fuse_clouds, load_depth_png, load_mask_png, save_depth_png,
                      save_mask_png)


@dataclass(frozen=True)
class ConfigurationEntry:
    joints: Path
    depth: Path
    mask: Path
    tags: Path | None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    robot: Path
    mesh_root: Path
    intrinsics: Path
    configurations: tuple[ConfigurationEntry, ...]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent

    def resolve(value):
        p = Path(value)
        return p if p.is_absolute() else root / p

    try:
        robot = resolve(data["robot"])
        mesh_root = resolve(data.get("mesh_root", "."))
        intrinsics = resolve(data["intrinsics"])
        entries = []
        for entry in data["configurations"]:
            tags = resolve(entry["tags"]) if entry.get("tags") else None
            entries.append(ConfigurationEntry(
                resolve(entry["joints"]), resolve(entry["depth"]),
                resolve(entry["mask"]), tags))
    except KeyError as exc:
        raise ManifestError(f"manifest missing key {exc}") from exc
    if not entries:
        raise ManifestError("manifest lists no configurations")

    for required in [robot, intrinsics] + [
            p for e in entries for p in (e.joints, e.depth, e.mask, e.tags) if p]:
        if not Path(required).is_file():
            raise ManifestError(f"manifest references missing file: {required}")
    return DatasetManifest(root, robot, mesh_root, intrinsics, tuple(entries))


def load_robot(manifest: DatasetManifest) -> RobotModel:
    return parse_robot(manifest.robot.read_text(), manifest.mesh_root)


def load_dataset(manifest: DatasetManifest,
                 reg_config: RegistrationConfig | None = None) -> CalibrationDataset:
    """Sensing front end applied to every configuration of a manifest."""
    reg_config = reg_config or RegistrationConfig()
    model = load_robot(manifest)
    K = CameraIntrinsics.from_json(manifest.intrinsics)
    qs, clouds, tag_obs = [], [], []
    for c, entry in enumerate(manifest.configurations):
        qs.append(np.asarray(json.loads(entry.joints.read_text()), dtype=float))
        depth = load_depth_png(entry.depth)
        mask = load_mask_png(entry.mask)
        if mask.shape != depth.values.shape:
            raise ManifestError(f"mask/depth dimensions differ for {entry.mask}")
        band = erode_to_boundary(mask, reg_config.band_px)
        if not band.any():  # eroded away entirely; fall back to the full mask
            band = mask
        clouds.append(depth_to_cloud(depth, band, K, reg_config.stride))
        if entry.tags is not None:
            data = json.loads(entry.tags.read_text())
            data["config_index"] = c
            tag_obs.append(TagObservation.from_dict(data))
    return CalibrationDataset(model, tuple(qs), tuple(clouds), tuple(tag_obs), K,
                              reg_config)


def observed_from_dataset(dataset: CalibrationDataset) -> ObservedCloud:
    return fuse_clouds(list(dataset.clouds))


def render_sparse_depth(points_cam: np.ndarray, K: CameraIntrinsics):
    """Splat camera-frame points into a depth map + mask, keeping the nearest z."""
    depth = np.zeros((K.height, K.width))
    mask = np.zeros((K.height, K.width), dtype=bool)
    px = K.project(points_cam)
    u = np.round(px[:, 0]).astype(int)
    v = np.round(px[:, 1]).astype(int)
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height) & (points_cam[:, 2] > 0)
    for ui, vi, zi in zip(u[inside], v[inside], points_cam[inside, 2]):
        if not mask[vi, ui] or zi < depth[vi, ui]:
            depth[vi, ui] = zi
            mask[vi, ui] = True
    return depth, mask


def write_synthetic_dataset(scene: SyntheticScene, robot_path, mesh_root,
                            out_dir) -> Path:
    """Materialize a synthetic scene to the manifest layout; returns manifest path.

    A ground-truth pose file (gt_pose.json, camera_T_base row-major) and a
    registration config tuned for sparse rendered depth are written alongside.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = scene.intrinsics
    K.to_json(out / "intrinsics.json")

    entries = []
    for c, q in enumerate(scene.qs):
        depth, mask = render_sparse_depth(scene.observed.per_config(c), K)
        depth_name = f"depth_{c:03d}.png"
        mask_name = f"mask_{c:03d}.png"
        joints_name = f"joints_{c:03d}.json"
        tags_name = f"tags_{c:03d}.json"
        save_depth_png(out / depth_name, np.where(mask, depth, 0.0))
        save_mask_png(out / mask_name, mask)
        (out / joints_name).write_text(json.dumps(np.asarray(q).tolist()) + "\n")
        (out / tags_name).write_text(
            json.dumps(scene.tag_obs[c].to_dict(), indent=2) + "\n")
        entries.append({"joints": joints_name, "depth": depth_name,
                        "mask": mask_name, "tags": tags_name})

    manifest = {
        "robot": str(Path(robot_path).resolve()),
        "mesh_root": str(Path(mesh_root).resolve()),
        "intrinsics": "intrinsics.json",
        "configurations": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    (out / "gt_pose.json").write_text(
        json.dumps(scene.true_pose.matrix().tolist(), indent=2) + "\n")
    # rendered depth is sparse: keep every pixel
    RegistrationConfig(stride=1).to_json(out / "config.json")
    return manifest_path
