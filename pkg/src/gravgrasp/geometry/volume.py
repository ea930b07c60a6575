"""Pinhole camera, depth rendering and TSDF fusion into voxel volumes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriangleMesh
from .query import ray_triangle_hits
from .transforms import Pose, look_at

log = logging.getLogger(__name__)

UNOBSERVED_TSDF = 1.0


@dataclass(frozen=True, eq=False)
class CameraModel:
    pose: Pose  # camera-to-world, OpenCV axes
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")

    @classmethod
    def default(cls, eye=(0.5, 0.0, 0.5), target=(0.0, 0.0, 0.05)) -> CameraModel:
        return cls(look_at(eye, target), 135.0, 135.0, 80.0, 60.0, 160, 120)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shape (H, W, 3)."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def project(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = points_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * points_cam[:, 0] / z + self.cx
            v = self.fy * points_cam[:, 1] / z + self.cy
        return u, v


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float] = (-0.15, -0.15, -0.05)
    voxel_size: float = 0.3 / 40
    dims: tuple[int, int, int] = (40, 40, 40)

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must be three positive integers")
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def centers(self) -> np.ndarray:
        """Voxel centres, shape (nx, ny, nz, 3)."""
        axes = [self.origin[k] + (np.arange(self.dims[k]) + 0.5) * self.voxel_size for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def index_of(self, point) -> tuple[int, int, int] | None:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.origin) / self.voxel_size).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.dims):
            return None
        return tuple(int(i) for i in idx)

    def center_of(self, index) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(index) + 0.5) * self.voxel_size

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "voxel_size": self.voxel_size, "dims": list(self.dims)}


@dataclass(eq=False)
class VoxelVolume:
    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in self.dims) or len(self.dims) != 3:
            raise ValueError("dims must be three positive integers")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        for name, arr in self.channels.items():
            self._check(name, arr)

    def _check(self, name, arr):
        if np.asarray(arr).size != int(np.prod(self.dims)):
            raise ValueError(f"channel {name!r} has {np.asarray(arr).size} entries, expected {np.prod(self.dims)}")

    @classmethod
    def from_spec(cls, spec: GridSpec, channels=None) -> VoxelVolume:
        return cls(np.array(spec.origin), spec.voxel_size, spec.dims, dict(channels or {}))

    @property
    def spec(self) -> GridSpec:
        return GridSpec(tuple(self.origin), self.voxel_size, self.dims)

    def set_channel(self, name: str, arr: np.ndarray) -> None:
        self._check(name, arr)
        self.channels[name] = np.asarray(arr).reshape(self.dims)

    def __getitem__(self, name: str) -> np.ndarray:
        return np.asarray(self.channels[name]).reshape(self.dims)


# ----------------------------------------------------------------- rendering


def render_depth(objects, camera: CameraModel, *, table: bool = False,
                 noise_sigma: float = 0.0, rng: np.random.Generator | None = None,
                 tile: int = 8) -> np.ndarray:
    """Ray-cast depth image (z along the optical axis). Misses are NaN.

    ``objects`` is an iterable of ``(mesh, pose)`` pairs in the world frame.
    With ``table`` the plane z = 0 is rendered as well. Triangles are binned
    into square pixel tiles so each ray only meets nearby triangles.
    """
    H, W = camera.height, camera.width
    rays_cam = camera.pixel_rays()
    world_to_cam = camera.pose.inverse()
    tris = []
    for mesh, pose in objects:
        V = world_to_cam.transform_points(pose.transform_points(mesh.vertices))
        tris.append(V[mesh.triangles])
    depth = np.full((H, W), np.inf)
    if tris:
        T = np.concatenate(tris)  # camera frame, (n, 3, 3)
        z = T[..., 2]
        front = np.all(z > 1e-9, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = camera.fx * T[..., 0] / z + camera.cx
            v = camera.fy * T[..., 1] / z + camera.cy
        u0 = np.where(front, np.floor(u.min(axis=1)) - 1, 0)
        u1 = np.where(front, np.ceil(u.max(axis=1)) + 1, W - 1)
        v0 = np.where(front, np.floor(v.min(axis=1)) - 1, 0)
        v1 = np.where(front, np.ceil(v.max(axis=1)) + 1, H - 1)
        # drop triangles entirely behind the camera
        keep = np.any(z > 0, axis=1) & (u1 >= 0) & (u0 <= W - 1) & (v1 >= 0) & (v0 <= H - 1)
        origin = np.zeros((1, 3))
        for ty in range(0, H, tile):
            for tx in range(0, W, tile):
                sel = np.flatnonzero(keep & (u1 >= tx) & (u0 <= tx + tile - 1) & (v1 >= ty) & (v0 <= ty + tile - 1))
                if len(sel) == 0:
                    continue
                block = rays_cam[ty:ty + tile, tx:tx + tile]
                Tt = T[sel]
                t = ray_triangle_hits(origin, block.reshape(-1, 3), Tt[:, 0], Tt[:, 1], Tt[:, 2])
                depth[ty:ty + tile, tx:tx + tile] = t.reshape(block.shape[:2])
    if table:
        R, eye = camera.pose.rotation, camera.pose.translation
        dz = (rays_cam @ R.T)[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dz < 0, -eye[2] / dz, np.inf)
        depth = np.minimum(depth, np.where(t > 0, t, np.inf))
    depth = np.where(np.isfinite(depth), depth, np.nan)
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        depth = depth + rng.normal(0.0, noise_sigma, depth.shape)
    return depth


def integrate_tsdf(depth: np.ndarray, camera: CameraModel, grid: GridSpec, truncation: float | None = None) -> VoxelVolume:
    """Fuse one depth image into a truncated signed distance volume.

    Channels: ``tsdf`` in [-1, 1] (positive in front of the surface) and
    ``observed`` (1 where the voxel was seen, else 0 with tsdf = 1).
    """
    truncation = 4.0 * grid.voxel_size if truncation is None else float(truncation)
    if truncation <= grid.voxel_size:
        raise ValueError("truncation must exceed the voxel size")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise ValueError("depth image does not match camera resolution")
    pts = grid.centers().reshape(-1, 3)
    pc = camera.pose.inverse().transform_points(pts)
    u, v = camera.project(pc)
    z = pc[:, 2]
    in_front = z > 0
    ui = np.floor(np.where(in_front, u, -1) + 0.5).astype(np.int64)
    vi = np.floor(np.where(in_front, v, -1) + 0.5).astype(np.int64)
    in_img = in_front & (ui >= 0) & (ui < camera.width) & (vi >= 0) & (vi < camera.height)
    tsdf = np.full(len(pts), UNOBSERVED_TSDF)
    observed = np.zeros(len(pts), dtype=np.uint8)
    if not np.any(in_img):
        log.warning("voxel grid lies entirely outside the camera frustum")
    else:
        d = np.full(len(pts), np.nan)
        d[in_img] = depth[vi[in_img], ui[in_img]]
        ray_len = np.sqrt((pc[:, 0] / np.where(in_front, z, 1)) ** 2 + (pc[:, 1] / np.where(in_front, z, 1)) ** 2 + 1.0)
        sdf = (d - z) * ray_len
        ok = in_img & np.isfinite(d) & (sdf >= -truncation)
        tsdf[ok] = np.clip(sdf[ok] / truncation, -1.0, 1.0)
        observed[ok] = 1
    return VoxelVolume.from_spec(grid, {
        "tsdf": tsdf.reshape(grid.dims).astype(np.float32),
        "observed": observed.reshape(grid.dims),
    })
