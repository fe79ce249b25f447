"""URDF parsing, forward kinematics, and posed link-surface clouds."""

from __future__ import annotations

import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import liegroup as lg
from .errors import DegenerateMesh, DimensionMismatch, KinematicLoop, ParseError
from .meshes import Mesh, load_mesh, sample_surface, vertex_normals


class JointLimitWarning(UserWarning):
    """A joint value exceeds its nominal limits (tolerated, not fatal)."""


@dataclass(frozen=True)
class Link:
    name: str
    mesh: Mesh | None
    mesh_origin: lg.Pose


@dataclass(frozen=True)
class Joint:
    name: str
    type: str  # revolute | prismatic | fixed
    parent: str
    child: str
    origin: lg.Pose
    axis: np.ndarray
    limits: tuple[float, float]


@dataclass(frozen=True)
class RobotModel:
    """Kinematic tree plus per-link surface meshes."""

    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    root: str

    @property
    def non_fixed_joints(self) -> tuple[Joint, ...]:
        return tuple(j for j in self.joints if j.type != "fixed")

    def link(self, name: str) -> Link:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)


@dataclass(frozen=True)
class PosedModelCloud:
    """Model surface points + outward unit normals in the robot base frame."""

    points: np.ndarray      # (N, 3)
    normals: np.ndarray     # (N, 3)
    link_index: np.ndarray  # (N,) int

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


def _rpy_matrix(r: float, p: float, y: float) -> np.ndarray:
    return lg.exp_so3([0, 0, y]) @ lg.exp_so3([0, p, 0]) @ lg.exp_so3([r, 0, 0])


def _parse_origin(element) -> lg.Pose:
    if element is None:
        return lg.Pose.identity()
    xyz = [float(v) for v in element.get("xyz", "0 0 0").split()]
    rpy = [float(v) for v in element.get("rpy", "0 0 0").split()]
    return lg.Pose(_rpy_matrix(*rpy), xyz)


def _resolve_mesh_path(filename: str, mesh_root: Path) -> Path:
    if filename.startswith("package://"):
        # drop the package name, keep the in-package path
        remainder = filename[len("package://"):]
        parts = remainder.split("/", 1)
        relative = parts[1] if len(parts) == 2 else parts[0]
        return mesh_root / relative
    path = Path(filename)
    return path if path.is_absolute() else mesh_root / path


def parse_robot(description_text: str, mesh_root) -> RobotModel:
    """Parse a URDF document, resolving and loading referenced meshes."""
    mesh_root = Path(mesh_root)
    try:
        root = ET.fromstring(description_text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed robot description: {exc}") from exc
    if root.tag != "robot":
        raise ParseError(f"expected <robot> root element, got <{root.tag}>")

    mesh_cache: dict[Path, Mesh] = {}
    links = []
    for link_el in root.findall("link"):
        name = link_el.get("name")
        if not name:
            raise ParseError("link without a name")
        mesh = None
        mesh_origin = lg.Pose.identity()
        visual = link_el.find("visual")
        if visual is not None:
            mesh_el = visual.find("geometry/mesh")
            if mesh_el is not None:
                filename = mesh_el.get("filename", "")
                path = _resolve_mesh_path(filename, mesh_root)
                if path not in mesh_cache:
                    mesh_cache[path] = load_mesh(path)
                mesh = mesh_cache[path]
                mesh_origin = _parse_origin(visual.find("origin"))
        links.append(Link(name, mesh, mesh_origin))
    if not links:
        raise ParseError("robot description declares no links")
    link_names = {link.name for link in links}
    if len(link_names) != len(links):
        raise ParseError("duplicate link names")

    joints = []
    for joint_el in root.findall("joint"):
        name = joint_el.get("name", "")
        jtype = joint_el.get("type", "")
        if jtype == "continuous":
            jtype = "revolute"
            limits = (-np.inf, np.inf)
        elif jtype in ("revolute", "prismatic"):
            limit_el = joint_el.find("limit")
            if limit_el is not None:
                limits = (float(limit_el.get("lower", "-inf") or -np.inf),
                          float(limit_el.get("upper", "inf") or np.inf))
            else:
                limits = (-np.inf, np.inf)
        elif jtype == "fixed":
            limits = (0.0, 0.0)
        else:
            raise ParseError(f"joint '{name}' has unsupported type '{jtype}'")
        parent_el = joint_el.find("parent")
        child_el = joint_el.find("child")
        if parent_el is None or child_el is None:
            raise ParseError(f"joint '{name}' lacks parent or child")
        parent, child = parent_el.get("link"), child_el.get("link")
        if parent not in link_names or child not in link_names:
            raise ParseError(f"joint '{name}' references unknown link")
        axis_el = joint_el.find("axis")
        axis = np.array([float(v) for v in axis_el.get("xyz", "1 0 0").split()]) \
            if axis_el is not None else np.array([1.0, 0.0, 0.0])
        norm = np.linalg.norm(axis)
        if jtype != "fixed":
            if norm <= 0:
                raise ParseError(f"joint '{name}' has a zero axis")
            axis = axis / norm
        joints.append(Joint(name, jtype, parent, child, _parse_origin(joint_el.find("origin")), axis, limits))

    _validate_tree(link_names, joints)
    roots = link_names - {j.child for j in joints}
    return RobotModel(tuple(links), tuple(joints), roots.pop())


def _validate_tree(link_names: set, joints: list) -> None:
    parent_of: dict[str, str] = {}
    for joint in joints:
        if joint.child in parent_of:
            raise KinematicLoop(f"link '{joint.child}' has multiple parent joints")
        parent_of[joint.child] = joint.parent
    roots = link_names - set(parent_of)
    if len(roots) != 1:
        raise KinematicLoop(f"expected exactly one base link, found {sorted(roots)}")
    for start in parent_of:
        seen = {start}
        node = start
        while node in parent_of:
            node = parent_of[node]
            if node in seen:
                raise KinematicLoop(f"cycle through link '{node}'")
            seen.add(node)


def _joint_motion(joint: Joint, value: float) -> lg.Pose:
    if joint.type == "revolute":
        return lg.Pose(lg.exp_so3(joint.axis * value), np.zeros(3))
    if joint.type == "prismatic":
        return lg.Pose(np.eye(3), joint.axis * value)
    return lg.Pose.identity()


def forward_kinematics(model: RobotModel, q) -> dict[str, lg.Pose]:
    """Pose of every link in the base frame for joint values q (chain order)."""
    q = np.asarray(q, dtype=float).reshape(-1)
    movable = model.non_fixed_joints
    if len(q) != len(movable):
        raise DimensionMismatch(f"expected {len(movable)} joint values, got {len(q)}")
    values = {joint.name: value for joint, value in zip(movable, q)}
    for joint, value in zip(movable, q):
        lo, hi = joint.limits
        if value < lo or value > hi:
            warnings.warn(
                f"joint '{joint.name}' value {value:.4f} outside limits [{lo:.4f}, {hi:.4f}]",
                JointLimitWarning, stacklevel=2)

    poses = {model.root: lg.Pose.identity()}
    pending = list(model.joints)
    while pending:
        progressed = False
        for joint in list(pending):
            if joint.parent in poses:
                motion = _joint_motion(joint, values.get(joint.name, 0.0))
                poses[joint.child] = lg.compose(lg.compose(poses[joint.parent], joint.origin), motion)
                pending.remove(joint)
                progressed = True
        if not progressed:  # unreachable if the tree validated
            raise KinematicLoop("disconnected joints in kinematic tree")
    return poses


def pose_model_cloud(model: RobotModel, q, samples_per_link: int = 2000,
                     seed: int = 0) -> PosedModelCloud:
    """Sampled link surfaces (vertices + area-weighted face samples) posed by FK.

    Sampling is deterministic for a fixed seed; each link draws from its own
    RNG stream so results do not depend on link order.
    """
    fk = forward_kinematics(model, q)
    points, normals, link_idx = [], [], []
    for index, link in enumerate(model.links):
        if link.mesh is None:
            continue
        mesh = link.mesh
        local_pts = [mesh.vertices]
        local_nrm = [vertex_normals(mesh)]
        if samples_per_link > 0:
            rng = np.random.default_rng([seed, index])
            extra_pts, extra_nrm = sample_surface(mesh, samples_per_link, rng)
            local_pts.append(extra_pts)
            local_nrm.append(extra_nrm)
        pose = lg.compose(fk[link.name], link.mesh_origin)
        pts = lg.apply(pose, np.vstack(local_pts))
        nrm = np.vstack(local_nrm) @ pose.rotation.T
        points.append(pts)
        normals.append(nrm)
        link_idx.append(np.full(len(pts), index, dtype=int))
    if not points:
        raise DegenerateMesh("robot model has no link meshes to sample")
    return PosedModelCloud(np.vstack(points), np.vstack(normals), np.concatenate(link_idx))
