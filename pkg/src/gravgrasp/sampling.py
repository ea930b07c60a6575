"""Antipodal grasp candidates and their random perturbations."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .geometry.mesh import TriangleMesh
from .geometry.query import first_hit
from .geometry.transforms import Pose, axis_angle_to_matrix, perpendicular
from .parallel import parallel_map


@dataclass(frozen=True)
class SamplerConfig:
    n_surface_samples: int = 200
    mu: float = 0.75
    perturbations_per_seed: int = 8
    trans_sigma: float = 0.010
    rot_sigma: float = 0.15
    rng_seed: int = 0
    approach_angles: int = 6
    # rays leave p1 inside this fraction of the friction cone around -n1
    ray_cone_fraction: float = 0.0
    max_aperture: float = 0.085

    def __post_init__(self):
        if self.n_surface_samples < 0 or self.perturbations_per_seed < 0:
            raise ValueError("sample counts must be non-negative")
        if self.approach_angles < 1:
            raise ValueError("approach_angles must be at least 1")
        if self.trans_sigma < 0 or self.rot_sigma < 0:
            raise ValueError("perturbation sigmas must be non-negative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 <= self.ray_cone_fraction <= 1:
            raise ValueError("ray_cone_fraction must lie in [0, 1]")
        if not self.max_aperture > 0:
            raise ValueError("max_aperture must be positive")


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    """Pre-closure TCP pose in the object frame."""

    id: str
    pose: Pose
    pre_width: float
    provenance: str  # "AntipodalSeed" or "Perturbed"
    seed: int
    parent: str | None = None
    contacts: tuple | None = field(default=None, repr=False)  # (p1, n1, p2, n2) for seeds

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "pose": self.pose.to_dict(),
            "pre_width": float(self.pre_width),
            "provenance": self.provenance,
            "seed": int(self.seed),
            "parent": self.parent,
        }
        if self.contacts is not None:
            d["contacts"] = [list(map(float, v)) for v in self.contacts]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GraspCandidate:
        contacts = d.get("contacts")
        return cls(
            id=str(d["id"]),
            pose=Pose.from_dict(d["pose"]),
            pre_width=float(d["pre_width"]),
            provenance=str(d["provenance"]),
            seed=int(d["seed"]),
            parent=d.get("parent"),
            contacts=None if contacts is None else tuple(np.array(v, dtype=float) for v in contacts),
        )


def is_antipodal(p1, n1, p2, n2, mu: float) -> bool:
    """Friction-cone test for a two-contact pair with outward surface normals.

    The segment p1 -> p2 must lie within atan(mu) of the inward normal at
    p1, and p2 -> p1 within atan(mu) of the inward normal at p2.
    """
    p1, n1, p2, n2 = (np.asarray(v, dtype=np.float64) for v in (p1, n1, p2, n2))
    d = p2 - p1
    length = np.linalg.norm(d)
    if length == 0.0:
        raise ValueError("contact points coincide")
    d = d / length
    half_angle = math.atan(mu) if np.isfinite(mu) else math.pi / 2
    c1 = float(np.dot(-n1, d)) / np.linalg.norm(n1)
    c2 = float(np.dot(-n2, -d)) / np.linalg.norm(n2)
    # compare angles rather than cosines so the infinite-mu case is exact
    a1 = math.acos(min(1.0, max(-1.0, c1)))
    a2 = math.acos(min(1.0, max(-1.0, c2)))
    tol = 1e-12
    return a1 <= half_angle + tol and a2 <= half_angle + tol


def _random_in_cone(axis: np.ndarray, half_angle: float, rng: np.random.Generator) -> np.ndarray:
    if half_angle <= 0:
        return axis.copy()
    cos_t = 1.0 - rng.random() * (1.0 - math.cos(half_angle))
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * rng.random()
    u = perpendicular(axis)
    v = np.cross(axis, u)
    return cos_t * axis + sin_t * (math.cos(phi) * u + math.sin(phi) * v)


def _grasp_frame(closing: np.ndarray, angle: float) -> np.ndarray:
    base = perpendicular(closing)
    z = axis_angle_to_matrix(closing, angle) @ base
    x = np.cross(closing, z)
    return np.column_stack([x, closing, z])


def _sample_one(index: int, mesh: TriangleMesh, cfg: SamplerConfig, prob: np.ndarray) -> list[GraspCandidate]:
    rng = np.random.default_rng([cfg.rng_seed, index])
    tri = int(rng.choice(len(prob), p=prob))
    r1, r2 = rng.random(2)
    s = math.sqrt(r1)
    a, b, c = (x[tri] for x in mesh.corners)
    p1 = (1 - s) * a + s * (1 - r2) * b + s * r2 * c
    n1 = mesh.face_normals[tri]
    phase = rng.random() * 2.0 * math.pi
    direction = _random_in_cone(-n1, cfg.ray_cone_fraction * math.atan(cfg.mu), rng)
    t, hit = first_hit(mesh, p1[None], direction[None])
    if hit[0] < 0:
        return []
    p2 = p1 + t[0] * direction
    n2 = mesh.face_normals[hit[0]]
    width = float(np.linalg.norm(p2 - p1))
    if width <= 1e-9 or width > cfg.max_aperture:
        return []
    if not is_antipodal(p1, n1, p2, n2, cfg.mu):
        return []
    closing = (p2 - p1) / width
    centre = 0.5 * (p1 + p2)
    out = []
    for k in range(cfg.approach_angles):
        angle = phase + 2.0 * math.pi * k / cfg.approach_angles
        pose = Pose(_grasp_frame(closing, angle), centre)
        out.append(GraspCandidate(
            id=f"s{index}a{k}", pose=pose, pre_width=width, provenance="AntipodalSeed",
            seed=cfg.rng_seed, contacts=(p1, n1, p2, n2),
        ))
    return out


def sample_antipodal_grasps(mesh: TriangleMesh, cfg: SamplerConfig, jobs: int = 1) -> list[GraspCandidate]:
    """Antipodal seed candidates, a pure function of ``(mesh, cfg)``.

    Each surface sample draws from its own stream seeded by
    ``(rng_seed, index)``, so the result is independent of ``jobs``.
    """
    if cfg.n_surface_samples == 0:
        return []
    prob = mesh.areas / mesh.areas.sum()
    work = partial(_sample_one, mesh=mesh, cfg=cfg, prob=prob)
    chunks = parallel_map(work, range(cfg.n_surface_samples), jobs)
    return [c for chunk in chunks for c in chunk]


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint32)[0])


def perturb_grasp(candidate: GraspCandidate, trans_sigma: float, rot_sigma: float, seed: int,
                  suffix: str = "p") -> GraspCandidate:
    """Compose the pose with a random rigid offset expressed in the TCP frame."""
    if trans_sigma < 0 or rot_sigma < 0:
        raise ValueError("sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    dt = rng.normal(0.0, trans_sigma, 3) if trans_sigma > 0 else np.zeros(3)
    axis = rng.normal(size=3)
    angle = rng.normal(0.0, rot_sigma) if rot_sigma > 0 else 0.0
    offset = Pose(axis_angle_to_matrix(axis, angle), dt)
    return GraspCandidate(
        id=f"{candidate.id}{suffix}", pose=candidate.pose * offset, pre_width=candidate.pre_width,
        provenance="Perturbed", seed=int(seed), parent=candidate.id,
    )


def generate_candidates(mesh: TriangleMesh, cfg: SamplerConfig, jobs: int = 1) -> list[GraspCandidate]:
    """Antipodal seeds followed, per seed, by its perturbed variants."""
    out = []
    for cand in sample_antipodal_grasps(mesh, cfg, jobs):
        out.append(cand)
        for j in range(cfg.perturbations_per_seed):
            s = derive_seed(cfg.rng_seed, hash_id(cand.id), j)
            out.append(perturb_grasp(cand, cfg.trans_sigma, cfg.rot_sigma, s, suffix=f"p{j}"))
    return out


def hash_id(text: str) -> int:
    """Stable 32-bit integer for an id string (Python's hash() is salted)."""
    return zlib.crc32(text.encode("utf-8"))
