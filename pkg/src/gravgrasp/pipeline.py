"""Per-object grasp refinement and per-scene label generation."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .annotation import VoxelAnnotation, annotate_scene
from .closure import ClosureConfig, ClosureFailure, simulate_closure
from .geometry.mesh import TriangleMesh, sample_surface_grid
from .geometry.volume import CameraModel, GridSpec, VoxelVolume, integrate_tsdf, render_depth
from .hand import GripperParams
from .parallel import parallel_map
from .sampling import GraspCandidate, SamplerConfig, generate_candidates
from .scene import (
    GravityProjectionParams,
    ObjectModel,
    Scene,
    ScoredGrasp,
    SceneGrasp,
    compose_scene,
    project_grasps,
)
from .wrench import ContactForceLimits, disturbance_rejection_score

log = logging.getLogger(__name__)

PROGRESS_EVERY = 100


@dataclass
class RefineReport:
    grasps: list[ScoredGrasp]
    attempted: int = 0
    failures: Counter = field(default_factory=Counter)


def _refine_one(candidate: GraspCandidate, mesh: TriangleMesh, params: GripperParams, cfg: ClosureConfig,
                limits: ContactForceLimits, samples, score_kw: dict):
    try:
        settled = simulate_closure(params, mesh, candidate, cfg, samples)
    except ClosureFailure as exc:
        return exc.reason.value
    score = disturbance_rejection_score(settled, mesh.center_of_mass, limits, **score_kw)
    return ScoredGrasp(settled, score)


def refine_and_score(mesh: TriangleMesh, candidates: list[GraspCandidate], params: GripperParams,
                     closure_cfg: ClosureConfig, limits: ContactForceLimits, jobs: int = 1,
                     progress: Callable[[int, int], None] | None = None, **score_kw) -> RefineReport:
    """Close the hand on each candidate and score the grasps that settle.

    ``progress(done, total)`` is called after every ``PROGRESS_EVERY`` grasps
    and once at the end. Extra keywords (``f_max``, ``resolution``) go to
    the scorer.
    """
    samples = sample_surface_grid(mesh, closure_cfg.sample_spacing)
    work = partial(_refine_one, mesh=mesh, params=params, cfg=closure_cfg, limits=limits, samples=samples,
                   score_kw=score_kw)
    report = RefineReport([], attempted=len(candidates))
    total = len(candidates)
    for start in range(0, total, PROGRESS_EVERY):
        for res in parallel_map(work, candidates[start:start + PROGRESS_EVERY], jobs):
            if isinstance(res, str):
                report.failures[res] += 1
            else:
                report.grasps.append(res)
        if progress is not None:
            progress(min(start + PROGRESS_EVERY, total), total)
    return report


def build_object_grasps(mesh: TriangleMesh, sampler: SamplerConfig, params: GripperParams | None = None,
                        closure_cfg: ClosureConfig | None = None, limits: ContactForceLimits | None = None,
                        jobs: int = 1) -> RefineReport:
    params = params or GripperParams()
    closure_cfg = closure_cfg or ClosureConfig()
    limits = limits or ContactForceLimits.from_gripper(params)
    return refine_and_score(mesh, generate_candidates(mesh, sampler, jobs), params, closure_cfg, limits, jobs)


@dataclass
class SceneLabels:
    scene: Scene
    tsdf: VoxelVolume
    annotation: VoxelAnnotation
    grasps: list[SceneGrasp]


def observe(scene: Scene, library: dict[str, ObjectModel], camera: CameraModel, grid: GridSpec) -> VoxelVolume:
    depth = render_depth(scene.posed_meshes(library), camera, table=scene.table)
    return integrate_tsdf(depth, camera, grid)


def label_scene(scene: Scene, library: dict[str, ObjectModel], params: GripperParams | None = None,
                projection: GravityProjectionParams | None = None, grid: GridSpec | None = None,
                camera: CameraModel | None = None) -> SceneLabels:
    grid = grid or GridSpec()
    camera = camera or CameraModel.default()
    grasps = project_grasps(scene, library, params, projection)
    return SceneLabels(scene, observe(scene, library, camera, grid), annotate_scene(grasps, grid), grasps)


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


def scene_object_count(base_seed: int, index: int, lo: int = 1, hi: int = 5) -> int:
    """Object count for a scene, drawn uniformly from ``[lo, hi]``."""
    rng = np.random.default_rng([int(base_seed), int(index), 1])
    return int(rng.integers(lo, hi + 1))


def make_scene(library, base_seed: int, index: int, n_objects: int | None = None,
               lo: int = 1, hi: int = 5, **kw) -> Scene:
    n = n_objects if n_objects is not None else scene_object_count(base_seed, index, lo, hi)
    return compose_scene(library, n, scene_seed(base_seed, index), **kw)
