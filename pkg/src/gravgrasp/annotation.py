"""Rotation codec and per-voxel grasp labels."""

from __future__ import annotations

import enum
import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry.transforms import is_rotation
from .geometry.volume import GridSpec, VoxelVolume
from .hand import GraspMode

log = logging.getLogger(__name__)

_DEGENERATE = 1e-6


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross is slow for single 3-vectors, and the codec runs per voxel
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _norm(v: np.ndarray) -> float:
    return math.sqrt(float(v @ v))

ROT_CHANNELS = tuple(f"rot_{k}" for k in range(6))
MODE_CODES = {GraspMode.Precision: 1, GraspMode.Power: 2}
SENTINEL_F_G = -1.0
SENTINEL_WIDTH = -1.0


class BasisOrder(str, enum.Enum):
    ExEz = "ExEz"
    EyEz = "EyEz"
    Quaternion = "Quaternion"


@dataclass(frozen=True, eq=False)
class RotationEncoding:
    """Two raw (possibly unnormalized, non-orthogonal) basis vectors.

    For ``ExEz`` these estimate the x and z columns; for ``EyEz`` the y and
    z columns. The first vector is the prioritized one.
    """

    first: np.ndarray
    second: np.ndarray
    order: BasisOrder = BasisOrder.ExEz

    def __post_init__(self):
        a = np.asarray(self.first, dtype=np.float64).reshape(3)
        b = np.asarray(self.second, dtype=np.float64).reshape(3)
        if self.order == BasisOrder.Quaternion:
            raise ValueError("use a 4-vector for quaternion encodings")
        if not (math.isfinite(a.sum()) and math.isfinite(b.sum())):
            raise ValueError("encoding contains non-finite values")
        na, nb = _norm(a), _norm(b)
        if not (math.isfinite(na) and math.isfinite(nb)):
            raise ValueError("encoding contains non-finite values")
        if na < _DEGENERATE or nb < _DEGENERATE:
            raise ValueError("raw basis vector is (nearly) zero")
        if _norm(_cross(a / na, b / nb)) < _DEGENERATE:
            raise ValueError("raw basis vectors are (nearly) parallel")
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)
        object.__setattr__(self, "order", BasisOrder(self.order))

    @property
    def e_x_raw(self) -> np.ndarray:
        if self.order != BasisOrder.ExEz:
            raise AttributeError("e_x_raw is only stored by the ExEz order")
        return self.first

    @property
    def e_z_raw(self) -> np.ndarray:
        return self.second

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.first, self.second])


def encode_rotation(R, order: BasisOrder | str = BasisOrder.ExEz):
    """Columns (x, z) or (y, z) of ``R``; a unit quaternion (x, y, z, w) for Quaternion."""
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R, tol=1e-6):
        raise ValueError("not a rotation matrix")
    order = BasisOrder(order)
    if order == BasisOrder.Quaternion:
        return Rotation.from_matrix(R).as_quat()
    col = 0 if order == BasisOrder.ExEz else 1
    return RotationEncoding(R[:, col].copy(), R[:, 2].copy(), order)


def _gram_schmidt(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = a / _norm(a)
    w = b - float(u @ b) * u
    nw = _norm(w)
    if nw < _DEGENERATE * _norm(b):
        raise ValueError("raw basis vectors are (nearly) parallel")
    return u, w / nw


def reconstruct_rotation(enc, order: BasisOrder | str | None = None) -> np.ndarray:
    """Orthonormal rotation from an encoding.

    ExEz: ``e_x = normalize(ex~)``, ``e_z = normalize(ez~ - (e_x . ez~) e_x)``,
    ``e_y = e_z x e_x``. EyEz mirrors this with ``e_y`` first and
    ``e_x = e_y x e_z``. Quaternion normalizes a 4-vector (x, y, z, w).
    """
    if isinstance(enc, RotationEncoding):
        order = BasisOrder(order or enc.order)
        if order == BasisOrder.Quaternion:
            raise ValueError("a RotationEncoding cannot be decoded as a quaternion")
        first, second = enc.first, enc.second
    else:
        arr = np.asarray(enc, dtype=np.float64).ravel()
        order = BasisOrder(order or (BasisOrder.Quaternion if arr.size == 4 else BasisOrder.ExEz))
        if order == BasisOrder.Quaternion:
            if arr.size != 4 or not np.all(np.isfinite(arr)):
                raise ValueError("quaternion must be 4 finite numbers")
            n = np.linalg.norm(arr)
            if n < _DEGENERATE:
                raise ValueError("quaternion is (nearly) zero")
            return Rotation.from_quat(arr / n).as_matrix()
        if arr.size != 6:
            raise ValueError("expected 6 numbers for a two-vector encoding")
        checked = RotationEncoding(arr[:3], arr[3:], order)
        first, second = checked.first, checked.second

    if order == BasisOrder.ExEz:
        ex, ez = _gram_schmidt(first, second)
        ey = _cross(ez, ex)
    else:
        ey, ez = _gram_schmidt(first, second)
        ex = _cross(ey, ez)
    return np.column_stack([ex, ey, ez])


# ----------------------------------------------------------------- labels


@dataclass(eq=False)
class VoxelAnnotation:
    volume: VoxelVolume
    skipped: int = 0

    @property
    def validness(self) -> np.ndarray:
        return self.volume["validness"]

    @property
    def f_g(self) -> np.ndarray:
        return self.volume["f_g"]

    @property
    def width(self) -> np.ndarray:
        return self.volume["width"]

    @property
    def mode(self) -> np.ndarray:
        return self.volume["mode"]

    def rot(self) -> np.ndarray:
        """Raw rotation encodings, shape dims + (6,)."""
        return np.stack([self.volume[c] for c in ROT_CHANNELS], axis=-1)

    def valid_indices(self) -> np.ndarray:
        return np.argwhere(self.validness == 1)

    def rotation_at(self, index, order: BasisOrder = BasisOrder.ExEz) -> np.ndarray:
        if self.validness[tuple(index)] != 1:
            raise ValueError(f"voxel {tuple(index)} carries no grasp")
        return reconstruct_rotation(self.rot()[tuple(index)], order)


def empty_annotation(grid: GridSpec) -> VoxelAnnotation:
    dims = grid.dims
    channels = {
        "validness": np.zeros(dims, dtype=np.uint8),
        "f_g": np.full(dims, SENTINEL_F_G, dtype=np.float32),
        "width": np.full(dims, SENTINEL_WIDTH, dtype=np.float32),
        "mode": np.zeros(dims, dtype=np.uint8),
    }
    for c in ROT_CHANNELS:
        channels[c] = np.zeros(dims, dtype=np.float32)
    return VoxelAnnotation(VoxelVolume.from_spec(grid, channels))


def annotate_scene(scene_grasps, grid: GridSpec | None = None) -> VoxelAnnotation:
    """Bin valid scene grasps by TCP voxel, keeping the highest ``f_g`` per voxel.

    Grasps whose TCP falls outside the grid are skipped and counted.
    Invalid grasps are ignored.
    """
    grid = grid or GridSpec()
    ann = empty_annotation(grid)
    best: dict[tuple, object] = {}
    skipped = 0
    for g in scene_grasps:
        if not g.valid:
            continue
        idx = grid.index_of(g.pose.translation)
        if idx is None:
            skipped += 1
            continue
        cur = best.get(idx)
        if cur is None or g.f_g > cur.f_g:
            best[idx] = g
    vol = ann.volume
    for idx, g in best.items():
        vol.channels["validness"][idx] = 1
        vol.channels["f_g"][idx] = g.f_g
        vol.channels["width"][idx] = g.width
        vol.channels["mode"][idx] = MODE_CODES[GraspMode(g.mode)]
        enc = encode_rotation(g.pose.rotation).as_vector()
        for k, c in enumerate(ROT_CHANNELS):
            vol.channels[c][idx] = enc[k]
    if skipped:
        log.info("%d grasps fell outside the label grid", skipped)
    ann.skipped = skipped
    return ann
