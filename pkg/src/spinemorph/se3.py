"""Rigid transforms and SO(3) exponential/logarithm maps.

Rotations are 3x3 orthonormal matrices with det +1, translations are
3-vectors in millimetres. A transform maps local points x to R x + t.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_ORTHO_TOL = 1e-12
_NEAR_PI = 1e-6
_VALID_TOL = 1e-9


class NearPiRotationWarning(RuntimeWarning):
    """Log of a rotation whose angle is numerically indistinguishable from pi."""


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(w: np.ndarray) -> np.ndarray:
    return np.array([w[2, 1] - w[1, 2], w[0, 2] - w[2, 0], w[1, 0] - w[0, 1]]) * 0.5


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] *= -1
        q = u @ vt
    return q


def rot_exp(v) -> np.ndarray:
    """Rodrigues formula for an axis-angle vector."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    w = hat(v)
    if theta < 1e-8:
        return np.eye(3) + w + 0.5 * (w @ w)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * w + b * (w @ w)


def rotation_angle(r: np.ndarray) -> float:
    """Angle in [0, pi] of a rotation, computed with atan2 for accuracy at both ends."""
    s = np.linalg.norm(vee(r))
    c = 0.5 * (np.trace(r) - 1.0)
    return float(np.arctan2(s, c))


def rot_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector v with rot_exp(v) == r and |v| in [0, pi].

    Near pi the axis comes from the largest diagonal entry of the symmetric
    part, which makes the choice between the two antipodal answers
    deterministic. A NearPiRotationWarning is emitted when the angle is within
    1e-6 of pi.
    """
    r = np.asarray(r, dtype=float)
    skew = vee(r)  # sin(theta) * axis
    theta = rotation_angle(r)
    if theta < 1e-8:
        return skew * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-3:
        if np.pi - theta < _NEAR_PI:
            warnings.warn(
                f"rotation angle {theta:.9f} is within {_NEAR_PI} of pi; log is ambiguous",
                NearPiRotationWarning,
                stacklevel=2,
            )
        c = np.cos(theta)
        aat = (0.5 * (r + r.T) - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(aat)))
        axis = aat[:, k] / np.sqrt(max(aat[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ skew < 0:
            axis = -axis
        return theta * axis
    return skew * (theta / np.sin(theta))


def geodesic_rotation_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Frobenius norm of log(r1^T r2), i.e. sqrt(2) times the relative angle."""
    return float(np.sqrt(2.0) * rotation_angle(np.asarray(r1).T @ np.asarray(r2)))


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0.

    When w == 0 the sign is chosen so that the first nonzero vector
    component is positive, so equal rotations always map to equal arrays.
    """
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    return fix_hemisphere(q / np.linalg.norm(q))


def fix_hemisphere(q) -> np.ndarray:
    q = np.array(q, dtype=float)
    nz = np.flatnonzero(q)
    if nz.size and q[nz[0]] < 0:
        q = -q
    return q


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``y = rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    # quaternion the rotation was built from, kept so files re-serialise exactly
    source_quaternion: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.linalg.norm(r.T @ r - np.eye(3)) > _VALID_TOL or abs(np.linalg.det(r) - 1.0) > _VALID_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q, t) -> "RigidTransform":
        q = np.array(q, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not norm > 0:
            raise ValueError("quaternion must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        q = fix_hemisphere(q)
        q.setflags(write=False)
        return cls(matrix_from_quat(q), t, q)

    def quaternion(self) -> np.ndarray:
        if self.source_quaternion is not None:
            return self.source_quaternion.copy()
        return quat_from_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (
            np.linalg.norm(r.T @ r - np.eye(3)) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
            and bool(np.all(np.isfinite(self.translation)))
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return np.allclose(self.rotation, other.rotation, atol=atol, rtol=0) and np.allclose(
            self.translation, other.translation, atol=atol, rtol=0
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a ∘ b = {R_a R_b, R_a t_b + t_a}."""
    r = a.rotation @ b.rotation
    if np.linalg.norm(r.T @ r - np.eye(3)) > _ORTHO_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rot_exp(axis * rng.uniform(0.0, max_angle))


def random_transform(rng: np.random.Generator, max_angle: float = np.pi, scale: float = 50.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng, max_angle), rng.normal(scale=scale, size=3))
