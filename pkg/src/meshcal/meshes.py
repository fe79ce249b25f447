"""Triangle mesh loading (STL/OBJ) and surface sampling with normals."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMesh, MissingMesh

SUPPORTED_SUFFIXES = (".stl", ".obj")


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh. Vertices are welded on exact coordinates."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray     # (F, 3) int

    @property
    def face_normals_areas(self):
        v0 = self.vertices[self.faces[:, 0]]
        v1 = self.vertices[self.faces[:, 1]]
        v2 = self.vertices[self.faces[:, 2]]
        cross = np.cross(v1 - v0, v2 - v0)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        normals = np.zeros_like(cross)
        ok = areas > 0
        normals[ok] = cross[ok] / (2.0 * areas[ok, None])
        return normals, areas


def load_mesh(path) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise MissingMesh(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".stl":
        return _load_stl(path)
    if suffix == ".obj":
        return _load_obj(path)
    raise MissingMesh(f"unsupported mesh format '{suffix}' for {path}")


def _weld(triangles: np.ndarray) -> Mesh:
    """Build an indexed mesh from a (T, 3, 3) triangle soup."""
    flat = triangles.reshape(-1, 3)
    vertices, inverse = np.unique(flat, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    return Mesh(vertices, faces)


def _load_stl(path: Path) -> Mesh:
    raw = path.read_bytes()
    if _looks_ascii_stl(raw):
        return _parse_ascii_stl(raw.decode("ascii", errors="replace"), path)
    if len(raw) < 84:
        raise MissingMesh(f"truncated binary STL: {path}")
    (count,) = struct.unpack_from("<I", raw, 80)
    expected = 84 + 50 * count
    if len(raw) < expected:
        raise MissingMesh(f"binary STL shorter than declared ({path})")
    record = np.dtype([
        ("normal", "<f4", 3),
        ("verts", "<f4", (3, 3)),
        ("attr", "<u2"),
    ])
    body = np.frombuffer(raw, dtype=record, count=count, offset=84)
    return _weld(body["verts"].astype(float))


def _looks_ascii_stl(raw: bytes) -> bool:
    head = raw[:512].lstrip()
    return head.startswith(b"solid") and b"facet" in raw[:4096]


def _parse_ascii_stl(text: str, path: Path) -> Mesh:
    coords = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "vertex":
            coords.append([float(x) for x in parts[1:]])
    if len(coords) == 0 or len(coords) % 3 != 0:
        raise MissingMesh(f"malformed ASCII STL: {path}")
    return _weld(np.asarray(coords, dtype=float).reshape(-1, 3, 3))


def _load_obj(path: Path) -> Mesh:
    vertices = []
    faces = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not vertices or not faces:
        raise MissingMesh(f"OBJ file has no usable geometry: {path}")
    return Mesh(np.asarray(vertices, dtype=float), np.asarray(faces, dtype=int))


def oriented_face_normals(mesh: Mesh):
    """Face normals flipped (if needed) so the majority points away from the centroid."""
    normals, areas = mesh.face_normals_areas
    if areas.sum() <= 0.0:
        raise DegenerateMesh("mesh has zero total surface area")
    centroid = mesh.vertices.mean(axis=0)
    face_centers = mesh.vertices[mesh.faces].mean(axis=1)
    outwardness = np.einsum("ij,ij->i", normals, face_centers - centroid)
    if np.count_nonzero(outwardness < 0) > np.count_nonzero(outwardness > 0):
        warnings.warn("mesh winding appears inverted; flipping normals", stacklevel=2)
        normals = -normals
    return normals, areas


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of adjacent face normals, unit length."""
    face_normals, areas = oriented_face_normals(mesh)
    acc = np.zeros_like(mesh.vertices)
    weighted = face_normals * areas[:, None]
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    norms = np.linalg.norm(acc, axis=1)
    degenerate = norms <= 0
    acc[degenerate] = (0.0, 0.0, 1.0)
    norms[degenerate] = 1.0
    return acc / norms[:, None]


def sample_surface(mesh: Mesh, count: int, rng: np.random.Generator):
    """Area-weighted surface samples: (points, face normals at the samples)."""
    face_normals, areas = oriented_face_normals(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMesh("mesh has zero total surface area")
    if count <= 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[face_idx]]
    points = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return points, face_normals[face_idx]
