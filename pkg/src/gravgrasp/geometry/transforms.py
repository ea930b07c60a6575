"""Rigid transforms and rotation helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def _as_vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues formula. A zero axis or zero angle yields the identity."""
    axis = _as_vec3(axis, "axis")
    n = np.linalg.norm(axis)
    if n == 0.0 or angle == 0.0:
        return np.eye(3)
    k = axis / n
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotvec_to_matrix(rotvec) -> np.ndarray:
    rotvec = _as_vec3(rotvec, "rotvec")
    angle = float(np.linalg.norm(rotvec))
    if angle == 0.0:
        return np.eye(3)
    return axis_angle_to_matrix(rotvec / angle, angle)


def rot_x(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([1.0, 0.0, 0.0], angle)


def rot_y(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 1.0, 0.0], angle)


def rot_z(angle: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 0.0, 1.0], angle)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition through SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def perpendicular(v: np.ndarray) -> np.ndarray:
    """A deterministic unit vector orthogonal to ``v``."""
    v = np.asarray(v, dtype=np.float64)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(v)))] = 1.0
    p = np.cross(v, axis)
    return p / np.linalg.norm(p)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation`` (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = _as_vec3(self.translation, "translation").copy()
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __mul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform_points(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=np.float64)
        return P @ self.rotation.T + self.translation

    def transform_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def almost_equal(self, other: Pose, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )

    def to_dict(self) -> dict:
        return {
            "rotation": [list(map(float, row)) for row in self.rotation],
            "translation": list(map(float, self.translation)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Pose:
        return cls(np.array(data["rotation"], dtype=np.float64), data["translation"])

    def __repr__(self) -> str:
        t = ", ".join(f"{x:.4f}" for x in self.translation)
        return f"Pose(t=[{t}])"


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose in the OpenCV convention (z forward, y down)."""
    eye = _as_vec3(eye, "eye")
    target = _as_vec3(target, "target")
    forward = target - eye
    forward /= np.linalg.norm(forward)
    up = _as_vec3(up, "up")
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = perpendicular(forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(np.column_stack([right, down, forward]), eye)
