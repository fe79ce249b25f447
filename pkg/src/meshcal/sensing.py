"""Depth maps + segmentation masks -> masked, boundary-band, camera-frame clouds."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyObservation

# Valid depth range in meters and the flying-pixel discontinuity threshold.
DEPTH_MAX_M = 20.0
DISCONTINUITY_M = 0.05


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_json(cls, path) -> "CameraIntrinsics":
        data = json.loads(Path(path).read_text())
        return cls(fx=float(data["fx"]), fy=float(data["fy"]),
                   cx=float(data["cx"]), cy=float(data["cy"]),
                   width=int(data["width"]), height=int(data["height"]))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height}, indent=2) + "\n")

    def project(self, points) -> np.ndarray:
        """Camera-frame points (..., 3) -> pixel coordinates (..., 2)."""
        points = np.asarray(points, dtype=float)
        z = points[..., 2]
        return np.stack([self.fx * points[..., 0] / z + self.cx,
                         self.fy * points[..., 1] / z + self.cy], axis=-1)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth along the optical axis, meters; validity marks usable pixels."""

    values: np.ndarray
    validity: np.ndarray

    @classmethod
    def from_meters(cls, values) -> "DepthMap":
        """Build a depth map, flagging invalid and flying-pixel depths."""
        values = np.asarray(values, dtype=float)
        valid = np.isfinite(values) & (values > 0) & (values <= DEPTH_MAX_M)
        return cls(values, valid & ~_discontinuous(values, valid))


def _discontinuous(depth: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Pixels whose depth jumps more than DISCONTINUITY_M to any valid 8-neighbor."""
    jump = np.zeros(depth.shape, dtype=bool)
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            if dv == 0 and du == 0:
                continue
            shifted = np.roll(np.roll(depth, dv, axis=0), du, axis=1)
            shifted_valid = np.roll(np.roll(valid, dv, axis=0), du, axis=1)
            # mask out wrap-around rows/columns
            edge = np.zeros_like(jump)
            if dv == 1:
                edge[0, :] = True
            elif dv == -1:
                edge[-1, :] = True
            if du == 1:
                edge[:, 0] = True
            elif du == -1:
                edge[:, -1] = True
            comparable = valid & shifted_valid & ~edge
            jump |= comparable & (np.abs(depth - shifted) > DISCONTINUITY_M)
    return jump


@dataclass(frozen=True)
class ObservedCloud:
    """Fused camera-frame points tagged with their source configuration."""

    points: np.ndarray        # (M, 3)
    config_index: np.ndarray  # (M,) int

    @property
    def n_configs(self) -> int:
        return int(self.config_index.max()) + 1 if len(self.config_index) else 0

    def per_config(self, c: int) -> np.ndarray:
        return self.points[self.config_index == c]


def erode_to_boundary(mask, band_px: int):
    """Keep only pixels within band_px of the mask boundary (8-connected)."""
    if band_px < 1:
        raise ValueError("band_px must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(
        mask, structure=np.ones((3, 3), dtype=bool), iterations=band_px,
        border_value=0)
    return mask & ~interior


def depth_to_cloud(depth: DepthMap, mask, K: CameraIntrinsics, stride: int = 1) -> np.ndarray:
    """Back-project masked, valid pixels sampled at the given stride."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.values.shape:
        raise ValueError("mask and depth dimensions differ")
    keep = mask & depth.validity
    keep_strided = np.zeros_like(keep)
    keep_strided[::stride, ::stride] = keep[::stride, ::stride]
    v, u = np.nonzero(keep_strided)
    z = depth.values[v, u]
    return np.stack([z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z], axis=1)


def fuse_clouds(per_config) -> ObservedCloud:
    """Concatenate per-configuration clouds, preserving the source index."""
    if len(per_config) < 1:
        raise ValueError("need at least one configuration")
    points, index = [], []
    for c, cloud in enumerate(per_config):
        cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
        points.append(cloud)
        index.append(np.full(len(cloud), c, dtype=int))
    total = np.vstack(points)
    if len(total) == 0:
        raise EmptyObservation("every configuration yielded an empty cloud")
    return ObservedCloud(total, np.concatenate(index))


def load_depth_png(path) -> DepthMap:
    """16-bit single-channel PNG, millimeters, 0 = invalid."""
    raw = np.asarray(Image.open(path), dtype=np.uint16)
    meters = raw.astype(float) / 1000.0
    meters[raw == 0] = np.nan
    return DepthMap.from_meters(meters)


def save_depth_png(path, depth_m) -> None:
    depth_m = np.asarray(depth_m, dtype=float)
    mm = np.where(np.isfinite(depth_m) & (depth_m > 0),
                  np.round(depth_m * 1000.0), 0).astype(np.uint16)
    Image.fromarray(mm).save(path)


def load_mask_png(path) -> np.ndarray:
    """8-bit single-channel PNG, nonzero = robot."""
    return np.asarray(Image.open(path)) > 0


def save_mask_png(path, mask) -> None:
    Image.fromarray((np.asarray(mask, dtype=bool) * np.uint8(255))).save(path)
