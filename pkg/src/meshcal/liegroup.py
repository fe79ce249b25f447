"""SO(3)/SE(3) primitives: hat operators, exponential maps, and logarithm.

Conventions follow the usual twist layout [omega, tau] with rotation first.
All functions are pure and operate on plain numpy arrays; poses are stored
as rotation matrix + translation vector rather than 4x4 homogeneous form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi

# Below this rotation angle the Rodrigues coefficients are evaluated by
# Taylor series to avoid 0/0 and catastrophic cancellation.
SMALL_ANGLE = 1e-4

# Compositions between re-orthonormalizations of the rotation part.
RENORM_EVERY = 50

_ROTATION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Twist:
    """se(3) increment: rotation part omega (rad), translation part tau (m)."""

    omega: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float).reshape(3))
        if not (np.isfinite(self.omega).all() and np.isfinite(self.tau).all()):
            raise ValueError("twist entries must be finite")

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.tau])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    # bookkeeping for drift control; bumped by compose()
    compositions: int = field(default=0, compare=False)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise ValueError("pose entries must be finite")
        if np.linalg.norm(R.T @ R - np.eye(3)) > _ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ROTATION_TOL:
            raise ValueError("rotation determinant is not +1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def hat_so3(omega) -> np.ndarray:
    """Skew-symmetric matrix M with M @ b == omega x b."""
    wx, wy, wz = np.asarray(omega, dtype=float).reshape(3)
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def hat_se3(theta: Twist) -> np.ndarray:
    """4x4 matrix representation of a twist."""
    m = np.zeros((4, 4))
    m[:3, :3] = hat_so3(theta.omega)
    m[:3, 3] = theta.tau
    return m


def _rodrigues_coefficients(angle: float):
    """(sin a / a, (1 - cos a) / a^2, (a - sin a) / a^3) with Taylor fallback."""
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        sa = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        ca = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        ja = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
        return sa, ca, ja
    s, c = np.sin(angle), np.cos(angle)
    return s / angle, (1.0 - c) / angle**2, (angle - s) / angle**3


def exp_so3(omega) -> np.ndarray:
    """Rodrigues' formula: rotation by ||omega|| about omega/||omega||."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    angle = float(np.linalg.norm(omega))
    sa, ca, _ = _rodrigues_coefficients(angle)
    K = hat_so3(omega)
    return np.eye(3) + sa * K + ca * (K @ K)


def left_jacobian(omega) -> np.ndarray:
    """Coupling matrix between rotation and translation in the SE(3) exponential."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    angle = float(np.linalg.norm(omega))
    _, ca, ja = _rodrigues_coefficients(angle)
    K = hat_so3(omega)
    return np.eye(3) + ca * K + ja * (K @ K)


def exp_se3(theta: Twist) -> Pose:
    """Closed-form SE(3) exponential of a twist."""
    return Pose(exp_so3(theta.omega), left_jacobian(theta.omega) @ theta.tau)


def exp_se3_linearized(theta: Twist) -> np.ndarray:
    """First-order approximation I4 + hat(theta), returned as 4x4 matrix."""
    return np.eye(4) + hat_se3(theta)


def log_so3(rotation) -> np.ndarray:
    """Principal-branch rotation logarithm; raises AngleNearPi near the cut."""
    R = np.asarray(rotation, dtype=float).reshape(3, 3)
    angle = float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))
    if angle > np.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {angle:.9f} within 1e-6 of pi")
    skew = 0.5 * (R - R.T)
    w = np.array([skew[2, 1], skew[0, 2], skew[1, 0]])
    if angle < SMALL_ANGLE:
        # w == sin(angle)/angle * omega; invert the sinc by series
        a2 = angle * angle
        return w * (1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0)
    return w * (angle / np.sin(angle))


def log_se3(pose: Pose) -> Twist:
    """Inverse of exp_se3 on the principal branch."""
    omega = log_so3(pose.rotation)
    tau = np.linalg.solve(left_jacobian(omega), pose.translation)
    return Twist(omega, tau)


def compose(a: Pose, b: Pose) -> Pose:
    """Group product a * b (apply b first, then a)."""
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    count = max(a.compositions, b.compositions) + 1
    if count >= RENORM_EVERY:
        R = project_rotation(R)
        count = 0
    return Pose(R, t, compositions=count)


def inverse(a: Pose) -> Pose:
    return Pose(a.rotation.T, -a.rotation.T @ a.translation, compositions=a.compositions)


def apply(a: Pose, p) -> np.ndarray:
    """Apply a to one point (3,) or a stack of points (..., 3)."""
    p = np.asarray(p, dtype=float)
    return p @ a.rotation.T + a.translation


def project_rotation(m) -> np.ndarray:
    """Nearest orthonormal matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float).reshape(3, 3))
    R = u @ vt
    if np.linalg.det(R) < 0:
        R = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return R
