"""Grasp-and-lift benchmark episodes, detectors and SR/CR metrics."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Protocol

import numpy as np

from .annotation import BasisOrder, VoxelAnnotation, annotate_scene, reconstruct_rotation
from .closure import ClosureConfig, ClosureFailure, SettledGrasp, simulate_closure
from .geometry.mesh import sample_surface_grid
from .geometry.query import unsigned_distance
from .geometry.transforms import Pose
from .geometry.volume import CameraModel, GridSpec, VoxelVolume
from .hand import FingerState, GripperParams, hand_collision_shapes
from .parallel import parallel_map
from .pipeline import observe
from .sampling import GraspCandidate
from .scene import GravityProjectionParams, Scene, hand_in_collision, project_grasps
from .wrench import ContactForceLimits, max_resisted_force

log = logging.getLogger(__name__)

GRAVITY_ACCEL = 9.81


class LiftOutcome(str, enum.Enum):
    Success = "Success"
    GravityExceeded = "GravityExceeded"
    NoContact = "NoContact"
    Ejected = "Ejected"
    InitialPenetration = "InitialPenetration"
    NoTarget = "NoTarget"
    Scripted = "Scripted"


@dataclass(frozen=True, eq=False)
class DetectedGrasp:
    pose: Pose  # TCP in the world frame
    width: float
    score: float
    scripted_outcome: bool | None = None  # fixtures only: bypasses physics


@dataclass(frozen=True)
class GroundTruth:
    """Simulator state handed to detectors; learned detectors must ignore it."""

    scene: Scene
    library: dict
    params: GripperParams
    projection: GravityProjectionParams
    grid: GridSpec


class Detector(Protocol):
    name: str

    def detect(self, tsdf: VoxelVolume, gravity: np.ndarray, truth: GroundTruth) -> list[DetectedGrasp]:
        ...


# ----------------------------------------------------------------- detectors


def ranked_from_annotation(ann: VoxelAnnotation, order: BasisOrder = BasisOrder.ExEz) -> list[DetectedGrasp]:
    """Valid voxels as grasps, highest ``f_g`` first (ties broken by voxel index)."""
    idx = ann.valid_indices()
    if len(idx) == 0:
        return []
    f = ann.f_g[tuple(idx.T)]
    rank = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], -f))
    rot = ann.rot()
    spec = ann.volume.spec
    out = []
    for k in rank:
        i = tuple(int(v) for v in idx[k])
        R = reconstruct_rotation(rot[i], order)
        out.append(DetectedGrasp(Pose(R, spec.center_of(i)), float(ann.width[i]), float(f[k])))
    return out


class OracleDetector:
    """Reads the ground-truth label volume of the current scene state."""

    name = "oracle"

    def detect(self, tsdf, gravity, truth: GroundTruth) -> list[DetectedGrasp]:
        grasps = project_grasps(truth.scene, truth.library, truth.params, truth.projection)
        return ranked_from_annotation(annotate_scene(grasps, truth.grid))


class TopDownHeuristicDetector:
    """Vertical pinch at the highest observed surface, closing across its narrow side."""

    name = "topdown-heuristic"

    def __init__(self, max_candidates: int = 5, depth: float = 0.02, min_height: float = 0.01):
        self.max_candidates = max_candidates
        self.depth = depth
        self.min_height = min_height

    def detect(self, tsdf, gravity, truth=None) -> list[DetectedGrasp]:
        spec = tsdf.spec
        centres = spec.centers()
        surf = (np.abs(tsdf["tsdf"]) < 0.5) & (tsdf["observed"] > 0) & (centres[..., 2] > self.min_height)
        pts = centres[surf]
        if len(pts) == 0:
            return []
        order = np.argsort(-pts[:, 2], kind="stable")
        out: list[DetectedGrasp] = []
        used: list[np.ndarray] = []
        for i in order:
            top = pts[i]
            if any(np.linalg.norm(top[:2] - u[:2]) < 0.04 for u in used):
                continue
            used.append(top)
            near = pts[(np.linalg.norm(pts[:, :2] - top[:2], axis=1) < 0.06) & (pts[:, 2] > top[2] - self.depth)]
            xy = near[:, :2] - near[:, :2].mean(axis=0)
            if len(near) >= 3:
                _, _, vt = np.linalg.svd(xy, full_matrices=False)
                closing = np.array([vt[-1, 0], vt[-1, 1], 0.0])
            else:
                closing = np.array([0.0, 1.0, 0.0])
            closing /= np.linalg.norm(closing)
            span = np.ptp(xy @ closing[:2]) + spec.voxel_size
            z_axis = np.array([0.0, 0.0, -1.0])
            R = np.column_stack([np.cross(closing, z_axis), closing, z_axis])
            centre = np.array([near[:, 0].mean(), near[:, 1].mean(), top[2] - self.depth])
            out.append(DetectedGrasp(Pose(R, centre), float(span), float(top[2])))
            if len(out) >= self.max_candidates:
                break
        return out


class ScriptedDetector:
    """Test fixture: one grasp per call whose lift outcome is fixed."""

    def __init__(self, succeed: bool):
        self.succeed = succeed
        self.name = "scripted-success" if succeed else "scripted-fail"

    def detect(self, tsdf, gravity, truth: GroundTruth) -> list[DetectedGrasp]:
        if not truth.scene.objects:
            return []
        target = truth.scene.objects[0].pose.translation
        return [DetectedGrasp(Pose(np.eye(3), target), 0.05, 1.0, scripted_outcome=self.succeed)]


DETECTORS = {
    "oracle": OracleDetector,
    "topdown-heuristic": TopDownHeuristicDetector,
    "scripted-success": partial(ScriptedDetector, True),
    "scripted-fail": partial(ScriptedDetector, False),
}


def make_detector(name: str) -> Detector:
    try:
        return DETECTORS[name]()
    except KeyError:
        raise KeyError(f"unknown detector {name!r}; available: {', '.join(sorted(DETECTORS))}") from None


# --------------------------------------------------------------- execution


@dataclass(frozen=True)
class EvalConfig:
    max_consecutive_failures: int = 2
    approach_distance: float = 0.10
    approach_step: float = 0.01
    backoff_step: float = 0.0025
    backoff_tries: int = 4
    target_radius: float = 0.03
    gravity_accel: float = GRAVITY_ACCEL

    def __post_init__(self):
        if self.max_consecutive_failures < 1:
            raise ValueError("max_consecutive_failures must be >= 1")
        if self.approach_step <= 0 or self.approach_distance < 0:
            raise ValueError("approach distances must be positive")


@dataclass(frozen=True)
class LiftResult:
    success: bool
    reason: LiftOutcome
    object_index: int | None = None
    resisted: float = 0.0
    required: float = 0.0


def judge_lift(resisted_force: float, mass: float, g: float = GRAVITY_ACCEL) -> LiftResult:
    """Quasi-static lift verdict: the grasp holds iff it resists the object's weight."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    required = mass * g
    ok = resisted_force >= required
    return LiftResult(ok, LiftOutcome.Success if ok else LiftOutcome.GravityExceeded,
                      resisted=float(resisted_force), required=required)


class Executor:
    """Runs closure and lift physics, memoizing the weight-independent parts."""

    def __init__(self, library, params: GripperParams | None = None, closure_cfg: ClosureConfig | None = None,
                 limits: ContactForceLimits | None = None, cfg: EvalConfig | None = None):
        self.library = library
        self.params = params or GripperParams()
        self.closure_cfg = closure_cfg or ClosureConfig()
        self.limits = limits or ContactForceLimits.from_gripper(self.params)
        self.cfg = cfg or EvalConfig()
        self._samples: dict[str, object] = {}
        self._cache: dict[tuple, tuple[LiftOutcome, int | None, float]] = {}
        self._open = hand_collision_shapes(self.params, FingerState())

    def _surface(self, name):
        if name not in self._samples:
            self._samples[name] = sample_surface_grid(self.library[name].mesh, self.closure_cfg.sample_spacing)
        return self._samples[name]

    def target_of(self, scene: Scene, pose: Pose) -> int | None:
        best, best_d = None, self.cfg.target_radius
        for i, obj in enumerate(scene.objects):
            p = obj.pose.inverse().transform_points(pose.translation[None])
            d, _ = unsigned_distance(self.library[obj.name].mesh, p)
            if d[0] < best_d:
                best, best_d = i, float(d[0])
        return best

    def reachable(self, scene: Scene, pose: Pose, target: int | None) -> bool:
        """Open-hand sweep along the approach axis stays clear of the table and other objects."""
        approach = pose.rotation[:, 2]
        n = int(math.floor(self.cfg.approach_distance / self.cfg.approach_step + 1e-9))
        for k in range(n + 1):
            p = Pose(pose.rotation, pose.translation - k * self.cfg.approach_step * approach)
            if hand_in_collision([b.transformed(p) for b in self._open], scene, self.library, exclude=target):
                return False
        return True

    def settle(self, scene: Scene, grasp: DetectedGrasp, target: int) -> SettledGrasp | LiftOutcome:
        obj = scene.objects[target]
        mesh = self.library[obj.name].mesh
        local = obj.pose.inverse() * grasp.pose
        approach = local.rotation[:, 2]
        last = LiftOutcome.InitialPenetration
        for k in range(self.cfg.backoff_tries + 1):
            cand = GraspCandidate("exec", Pose(local.rotation, local.translation - k * self.cfg.backoff_step * approach),
                                  grasp.width, "Executed", 0)
            try:
                return simulate_closure(self.params, mesh, cand, self.closure_cfg, self._surface(obj.name))
            except ClosureFailure as exc:
                last = LiftOutcome(exc.reason.value)
                if last != LiftOutcome.InitialPenetration:
                    return last
        return last

    def resisted_force(self, scene: Scene, grasp: DetectedGrasp, key=None) -> tuple[LiftOutcome, int | None, float]:
        """(outcome before weighing, target index, force resisted along gravity)."""
        if key is not None and key in self._cache:
            return self._cache[key]
        target = self.target_of(scene, grasp.pose)
        if target is None:
            res = (LiftOutcome.NoTarget, None, 0.0)
        else:
            settled = self.settle(scene, grasp, target)
            if isinstance(settled, LiftOutcome):
                res = (settled, target, 0.0)
            else:
                obj = scene.objects[target]
                n_g = obj.pose.rotation.T @ scene.gravity
                f = max_resisted_force(settled, self.library[obj.name].mesh.center_of_mass, n_g, self.limits)
                res = (LiftOutcome.Success, target, f)
        if key is not None:
            self._cache[key] = res
        return res


def simulate_lift(scene: Scene, grasp: DetectedGrasp, mass: float | None, executor: Executor, key=None) -> LiftResult:
    """Close on the nearest object at the grasp pose and weigh the result.

    ``mass`` overrides the target's scene mass when given.
    """
    outcome, target, f = executor.resisted_force(scene, grasp, key)
    if outcome != LiftOutcome.Success:
        return LiftResult(False, outcome, target)
    m = scene.objects[target].mass if mass is None else mass
    res = judge_lift(f, m, executor.cfg.gravity_accel)
    return LiftResult(res.success, res.reason, target, res.resisted, res.required)


# ----------------------------------------------------------------- episodes


@dataclass(frozen=True)
class Trial:
    grasp_score: float
    success: bool
    reason: str
    object_name: str | None = None


@dataclass
class EpisodeRecord:
    scene_id: str
    objects_total: int
    trials: list[Trial] = field(default_factory=list)
    detection_failures: int = 0

    @property
    def objects_cleared(self) -> int:
        return sum(t.success for t in self.trials)


class _Session:
    """Caches weight-independent observations and detections for one scene."""

    def __init__(self, library, detector: Detector, executor: Executor, grid: GridSpec, camera: CameraModel,
                 projection: GravityProjectionParams):
        self.library, self.detector, self.executor = library, detector, executor
        self.grid, self.camera, self.projection = grid, camera, projection
        self._detections: dict[tuple, list[DetectedGrasp]] = {}
        self._reach: dict[tuple, bool] = {}

    def detections(self, state: Scene, key: tuple) -> list[DetectedGrasp]:
        if key not in self._detections:
            tsdf = observe(state, self.library, self.camera, self.grid)
            truth = GroundTruth(state, self.library, self.executor.params, self.projection, self.grid)
            self._detections[key] = self.detector.detect(tsdf, state.gravity, truth)
        return self._detections[key]

    def reachable(self, state: Scene, grasp: DetectedGrasp, key: tuple) -> bool:
        if key not in self._reach:
            target = self.executor.target_of(state, grasp.pose)
            self._reach[key] = self.executor.reachable(state, grasp.pose, target)
        return self._reach[key]


def run_episode(scene: Scene, detector: Detector, executor: Executor, *, mass: float | None = None,
                scene_id: str = "", session: _Session | None = None, grid: GridSpec | None = None,
                camera: CameraModel | None = None, projection: GravityProjectionParams | None = None) -> EpisodeRecord:
    """Grasp objects one at a time until the scene is clear or failures repeat.

    Each step observes the scene, executes the best-ranked reachable grasp
    and removes the lifted object on success. Failed lifts leave the scene
    untouched. Detection failures count toward termination but are not trials.
    """
    if mass is not None:
        scene = scene.with_masses(mass)
    session = session or _Session(executor.library, detector, executor, grid or GridSpec(),
                                  camera or CameraModel.default(), projection or GravityProjectionParams())
    record = EpisodeRecord(scene_id, len(scene.objects))
    remaining = list(range(len(scene.objects)))
    state = scene
    failures = 0
    while state.objects and failures < executor.cfg.max_consecutive_failures:
        skey = tuple(remaining)
        chosen = None
        for rank, det in enumerate(session.detections(state, skey)):
            if det.scripted_outcome is not None or session.reachable(state, det, (skey, rank)):
                chosen = (rank, det)
                break
        if chosen is None:
            record.detection_failures += 1
            failures += 1
            continue
        rank, det = chosen
        if det.scripted_outcome is not None:
            target = 0
            result = LiftResult(det.scripted_outcome, LiftOutcome.Scripted if not det.scripted_outcome
                                else LiftOutcome.Success, 0)
        else:
            result = simulate_lift(state, det, None, executor, key=(skey, rank))
            target = result.object_index
        name = state.objects[target].name if target is not None else None
        record.trials.append(Trial(det.score, result.success, result.reason.value, name))
        if result.success:
            failures = 0
            remaining.pop(target)
            state = state.without(target)
        else:
            failures += 1
    return record


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class MetricsRow:
    weight_kg: float
    trials: int
    successes: int
    objects: int

    @property
    def sr(self) -> float | None:
        return None if self.trials == 0 else 100.0 * self.successes / self.trials

    @property
    def cr(self) -> float | None:
        return None if self.objects == 0 else 100.0 * self.successes / self.objects


def compute_metrics(records: list[EpisodeRecord], weight_kg: float = float("nan")) -> MetricsRow:
    if not records:
        raise ValueError("no episode records")
    trials = sum(len(r.trials) for r in records)
    successes = sum(r.objects_cleared for r in records)
    objects = sum(r.objects_total for r in records)
    return MetricsRow(weight_kg, trials, successes, objects)


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    records: dict[float, list[EpisodeRecord]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["weight_kg", "trials", "successes", "objects", "SR", "CR"])
        for r in self.rows:
            w.writerow([f"{r.weight_kg:.3f}", r.trials, r.successes, r.objects,
                        "" if r.sr is None else f"{r.sr:.4f}", "" if r.cr is None else f"{r.cr:.4f}"])
        return buf.getvalue()


def read_metrics_csv(text: str) -> list[MetricsRow]:
    rows = []
    for d in csv.DictReader(io.StringIO(text)):
        rows.append(MetricsRow(float(d["weight_kg"]), int(d["trials"]), int(d["successes"]), int(d["objects"])))
    return rows


def parse_weights(spec: str) -> list[float]:
    """``"0.1:1.5:0.2"`` (inclusive range) or a comma list ``"0.1,0.5"``."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad weight range {spec!r}; expected start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad weight range {spec!r}")
        n = int(math.floor((stop - start) / step + 1e-9))
        weights = [round(start + k * step, 10) for k in range(n + 1)]
    else:
        weights = [float(p) for p in spec.split(",") if p.strip()]
    if not weights or any(not w > 0 for w in weights):
        raise ValueError("weights must be positive and non-empty")
    return weights


def _scene_sweep(item, library, detector_name, weights, params, closure_cfg, limits, cfg, grid, camera, projection):
    scene_id, scene = item
    detector = make_detector(detector_name) if isinstance(detector_name, str) else detector_name
    executor = Executor(library, params, closure_cfg, limits, cfg)
    session = _Session(library, detector, executor, grid, camera, projection)
    return [run_episode(scene, detector, executor, mass=w, scene_id=scene_id, session=session) for w in weights]


def weight_sweep(scenes: list[tuple[str, Scene]], library, detector, weights: list[float], *,
                 params: GripperParams | None = None, closure_cfg: ClosureConfig | None = None,
                 limits: ContactForceLimits | None = None, cfg: EvalConfig | None = None,
                 grid: GridSpec | None = None, camera: CameraModel | None = None,
                 projection: GravityProjectionParams | None = None, jobs: int = 1) -> MetricsReport:
    """Every scene at every weight (all object masses overridden); one row per weight."""
    if not weights or any(not w > 0 for w in weights):
        raise ValueError("weights must be positive and non-empty")
    params = params or GripperParams()
    work = partial(_scene_sweep, library=library, detector_name=detector, weights=list(weights), params=params,
                   closure_cfg=closure_cfg or ClosureConfig(), limits=limits or ContactForceLimits.from_gripper(params),
                   cfg=cfg or EvalConfig(), grid=grid or GridSpec(), camera=camera or CameraModel.default(),
                   projection=projection or GravityProjectionParams())
    per_scene = parallel_map(work, list(scenes), jobs)
    report = MetricsReport([])
    for k, w in enumerate(weights):
        recs = [s[k] for s in per_scene]
        report.records[w] = recs
        report.rows.append(compute_metrics(recs, w) if recs else MetricsRow(w, 0, 0, 0))
    return report
