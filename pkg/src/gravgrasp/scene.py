"""Cluttered tabletop scenes, scene-frame grasps and the gravity-rejection score."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .closure import SettledGrasp
from .geometry.mesh import TriangleMesh, load_mesh
from .geometry.query import contains, mesh_intersects, segment_triangle_crossing
from .geometry.transforms import Pose, axis_angle_to_matrix, rot_z
from .hand import FingerState, GraspMode, GripperParams, OrientedBox, hand_collision_shapes
from .wrench import DIRECTIONS, DisturbanceRejectionScore

log = logging.getLogger(__name__)

DEFAULT_GRAVITY = (0.0, 0.0, -1.0)
DEFAULT_DENSITY = 700.0  # kg/m^3, only used when a library entry has no mass


@dataclass(frozen=True)
class GravityProjectionParams:
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0 < self.epsilon <= 1 / math.sqrt(3):
            raise ValueError("epsilon must lie in (0, 1/sqrt(3)]")


def gravity_rejection(score, n_g, params: GravityProjectionParams | None = None,
                      directions: np.ndarray = DIRECTIONS) -> float:
    """Collapse a directional score to the force resisted along ``n_g``.

    ``f_g = min_i forces[i] / (n_i . n_g)`` over directions with
    ``n_i . n_g > epsilon``. For the six +-axis directions some axis always
    has a dot product of at least 1/sqrt(3), so the set is never empty.
    """
    params = params or GravityProjectionParams()
    forces = np.asarray(score.forces if hasattr(score, "forces") else score, dtype=np.float64)
    n = np.asarray(n_g, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("n_g must be a unit vector")
    dots = np.asarray(directions) @ n
    mask = dots > params.epsilon
    if not np.any(mask):
        raise ValueError("no direction lies within the gravity cone")
    return float(np.min(forces[mask] / dots[mask]))


# ------------------------------------------------------------------ library


@dataclass(frozen=True, eq=False)
class ScoredGrasp:
    settled: SettledGrasp
    score: DisturbanceRejectionScore

    def to_dict(self) -> dict:
        d = self.settled.to_dict()
        d["score"] = self.score.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScoredGrasp:
        return cls(SettledGrasp.from_dict(d), DisturbanceRejectionScore(np.array(d["score"])))


@dataclass(eq=False)
class ObjectModel:
    name: str
    mesh: TriangleMesh
    grasps: list[ScoredGrasp] | None = None
    mass: float | None = None

    @property
    def default_mass(self) -> float:
        if self.mass is not None:
            return float(self.mass)
        return float(max(abs(self.mesh.volume), 1e-6) * DEFAULT_DENSITY)


class LibraryError(Exception):
    pass


def load_library(directory, names=None, require_grasps: bool = True) -> dict[str, ObjectModel]:
    """Read ``<name>.obj`` / ``<name>.stl`` meshes and ``<name>.grasps.json`` files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LibraryError(f"object library not found: {directory}")
    meshes = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".obj", ".stl"))
    out = {}
    for path in meshes:
        name = path.stem
        if names is not None and name not in names:
            continue
        grasp_file = directory / f"{name}.grasps.json"
        grasps = None
        mass = None
        if grasp_file.is_file():
            data = json.loads(grasp_file.read_text())
            grasps = [ScoredGrasp.from_dict(g) for g in data.get("grasps", [])]
            mass = data.get("mass")
        elif require_grasps:
            raise LibraryError(f"object {name!r} has no score file {grasp_file.name}")
        out[name] = ObjectModel(name, load_mesh(path), grasps, mass)
    if not out:
        raise LibraryError(f"no meshes in {directory}")
    return out


# ------------------------------------------------------------------- scenes


@dataclass(frozen=True, eq=False)
class SceneObject:
    name: str
    pose: Pose
    mass: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("object mass must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "pose": self.pose.to_dict(), "mass": float(self.mass)}

    @classmethod
    def from_dict(cls, d: dict) -> SceneObject:
        return cls(d["name"], Pose.from_dict(d["pose"]), float(d["mass"]))


@dataclass(eq=False)
class Scene:
    objects: list[SceneObject]
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    seed: int = 0
    table: bool = True

    def __post_init__(self):
        g = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise ValueError("gravity must be a unit vector")
        self.gravity = g
        self.objects = list(self.objects)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "table": bool(self.table),
            "gravity": [float(x) for x in self.gravity],
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scene:
        return cls([SceneObject.from_dict(o) for o in d["objects"]], np.array(d["gravity"]),
                   int(d["seed"]), bool(d.get("table", True)))

    def with_masses(self, mass: float) -> Scene:
        return Scene([SceneObject(o.name, o.pose, mass) for o in self.objects], self.gravity, self.seed, self.table)

    def without(self, index: int) -> Scene:
        objs = [o for i, o in enumerate(self.objects) if i != index]
        return Scene(objs, self.gravity, self.seed, self.table)

    def posed_meshes(self, library) -> list[tuple[TriangleMesh, Pose]]:
        return [(library[o.name].mesh, o.pose) for o in self.objects]


def _hull_facets(mesh: TriangleMesh):
    """Planar facets of the convex hull as (outward normal, offset, vertex ids)."""
    hull = ConvexHull(mesh.vertices)
    facets: list[list] = []
    for eq, simplex in zip(hull.equations, hull.simplices):
        n, off = eq[:3], eq[3]
        for f in facets:
            if np.dot(f[0], n) > 1 - 1e-9 and abs(f[1] - off) < 1e-9:
                f[2].update(simplex.tolist())
                break
        else:
            facets.append([n, off, set(simplex.tolist())])
    return [(np.array(n), float(o), sorted(ids)) for n, o, ids in facets]


def _point_in_convex_polygon(p2: np.ndarray, poly2: np.ndarray, margin: float) -> bool:
    hull = ConvexHull(poly2)
    for eq in hull.equations:
        if eq[:2] @ p2 + eq[2] > -margin:
            return False
    return True


def stable_rotations(mesh: TriangleMesh, margin: float = 1e-4) -> list[np.ndarray]:
    """Rotations that rest the mesh on a hull facet whose support contains the COM."""
    com = mesh.center_of_mass
    out = []
    for n, _off, ids in _hull_facets(mesh):
        # rotate the facet normal onto -z
        target = np.array([0.0, 0.0, -1.0])
        axis = np.cross(n, target)
        s, c = np.linalg.norm(axis), float(np.dot(n, target))
        if s < 1e-12:
            R = np.eye(3) if c > 0 else axis_angle_to_matrix([1.0, 0.0, 0.0], math.pi)
        else:
            R = axis_angle_to_matrix(axis / s, math.atan2(s, c))
        pts = mesh.vertices[ids] @ R.T
        if len(pts) < 3:
            continue
        try:
            inside = _point_in_convex_polygon((R @ com)[:2], pts[:, :2], margin)
        except Exception:  # degenerate (collinear) facet
            continue
        if inside:
            out.append(R)
    return out


_STABLE: dict[str, list[np.ndarray]] = {}


def _stable_for(model: ObjectModel) -> list[np.ndarray]:
    key = model.mesh.digest
    if key not in _STABLE:
        _STABLE[key] = stable_rotations(model.mesh)
    return _STABLE[key]


def compose_scene(library: dict[str, ObjectModel], n_objects: int, seed: int, *,
                  workspace: float = 0.15, max_retries: int = 50, clearance: float = 0.002,
                  gravity=DEFAULT_GRAVITY) -> Scene:
    """Place ``n_objects`` library objects on the table at rejection-sampled stable poses.

    Objects rest on hull facets with a random yaw; their xy footprint stays
    inside the square ``[-workspace, workspace]^2``. Placement retries that keep colliding drop the object
    with a warning.
    """
    if not library:
        raise ValueError("object library is empty")
    if not 1 <= n_objects <= 5:
        raise ValueError("n_objects must be between 1 and 5")
    rng = np.random.default_rng(seed)
    names = sorted(library)
    placed: list[SceneObject] = []
    for slot in range(n_objects):
        name = names[int(rng.integers(len(names)))]
        model = library[name]
        rotations = _stable_for(model)
        if not rotations:
            log.warning("object %s has no stable resting facet; skipped", name)
            continue
        for _ in range(max_retries):
            R0 = rotations[int(rng.integers(len(rotations)))]
            R = rot_z(rng.uniform(0.0, 2.0 * math.pi)) @ R0
            V = model.mesh.vertices @ R.T
            ext = (V.max(axis=0) - V.min(axis=0))[:2]
            room = np.maximum(workspace - ext / 2, 0.0)
            xy = rng.uniform(-room, room)
            centre_xy = 0.5 * (V.min(axis=0) + V.max(axis=0))[:2]
            t = np.array([xy[0] - centre_xy[0], xy[1] - centre_xy[1], -V[:, 2].min()])
            pose = Pose(R, t)
            if all(not mesh_intersects(model.mesh, pose, library[o.name].mesh, o.pose, clearance) for o in placed):
                placed.append(SceneObject(name, pose, model.default_mass))
                break
        else:
            log.warning("could not place object %d (%s) after %d retries", slot, name, max_retries)
    return Scene(placed, np.array(gravity, dtype=np.float64), seed)


# --------------------------------------------------------------- projection


@dataclass(frozen=True, eq=False)
class SceneGrasp:
    object_index: int
    pose: Pose  # TCP in the world frame
    f_g: float
    width: float
    mode: GraspMode
    valid: bool
    candidate_id: str = ""
    finger_state: FingerState = field(default_factory=FingerState)

    def to_dict(self) -> dict:
        return {
            "object_index": self.object_index,
            "candidate_id": self.candidate_id,
            "pose": self.pose.to_dict(),
            "f_g": float(self.f_g),
            "width": float(self.width),
            "mode": self.mode.value,
            "valid": bool(self.valid),
        }


def box_hits_mesh(box: OrientedBox, mesh: TriangleMesh, pose: Pose) -> bool:
    """Exact overlap test between an oriented box and a posed triangle mesh."""
    V = pose.transform_points(mesh.vertices)
    corners = box.corners()
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    if np.any(V.max(axis=0) < lo) or np.any(V.min(axis=0) > hi):
        return False
    if np.any(box.contains(V)):
        return True
    # mesh edges against the box (slab clipping in box coordinates)
    E = mesh.edges
    a = (V[E[:, 0]] - box.center) @ box.rotation
    b = (V[E[:, 1]] - box.center) @ box.rotation
    d = b - a
    t0 = np.zeros(len(E))
    t1 = np.ones(len(E))
    ok = np.ones(len(E), dtype=bool)
    for k in range(3):
        h = box.half[k]
        dk, ak = d[:, k], a[:, k]
        par = np.abs(dk) < 1e-15
        ok &= ~(par & (np.abs(ak) > h))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-h - ak) / dk
            tb = (h - ak) / dk
        lo_k = np.where(par, -np.inf, np.minimum(ta, tb))
        hi_k = np.where(par, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, lo_k)
        t1 = np.minimum(t1, hi_k)
    if np.any(ok & (t0 <= t1)):
        return True
    # box edges against mesh triangles
    pairs = np.array([(i, j) for i in range(8) for j in range(i + 1, 8) if bin(i ^ j).count("1") == 1])
    P0, P1 = corners[pairs[:, 0]], corners[pairs[:, 1]]
    F = mesh.triangles
    if segment_triangle_crossing(P0, P1, V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]):
        return True
    # box completely inside the mesh
    if mesh.watertight:
        return bool(contains(TriangleMesh(V, F), box.center[None])[0])
    return False


def hand_in_collision(shapes_world: list[OrientedBox], scene: Scene, library, exclude: int | None,
                      table: bool | None = None) -> bool:
    use_table = scene.table if table is None else table
    if use_table:
        for box in shapes_world:
            if box.corners()[:, 2].min() < 0.0:
                return True
    for j, obj in enumerate(scene.objects):
        if j == exclude:
            continue
        mesh = library[obj.name].mesh
        for box in shapes_world:
            if box_hits_mesh(box, mesh, obj.pose):
                return True
    return False


def project_grasps(scene: Scene, library: dict[str, ObjectModel], params: GripperParams | None = None,
                   projection: GravityProjectionParams | None = None, keep_invalid: bool = False) -> list[SceneGrasp]:
    """Move every per-object grasp into the scene and drop colliding ones.

    A grasp is valid when both the open hand and the settled hand at the
    grasp pose clear the table and every other object. Output is ordered by
    object index, then candidate id.
    """
    params = params or GripperParams()
    projection = projection or GravityProjectionParams()
    out = []
    open_shapes = hand_collision_shapes(params, FingerState())
    for i, obj in enumerate(scene.objects):
        model = library.get(obj.name)
        if model is None or model.grasps is None:
            raise LibraryError(f"no grasp data for scene object {obj.name!r}")
        n_g = obj.pose.rotation.T @ scene.gravity
        for sg in sorted(model.grasps, key=lambda g: g.settled.candidate_id):
            world = obj.pose * sg.settled.hand_pose
            settled_shapes = hand_collision_shapes(params, sg.settled.finger_state)
            valid = True
            for shapes in (open_shapes, settled_shapes):
                if hand_in_collision([b.transformed(world) for b in shapes], scene, library, exclude=i):
                    valid = False
                    break
            if not valid and not keep_invalid:
                continue
            f_g = gravity_rejection(sg.score, n_g, projection)
            out.append(SceneGrasp(i, world, f_g, sg.settled.width, sg.settled.mode, valid,
                                  sg.settled.candidate_id, sg.settled.finger_state))
    return out


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), sort_keys=True, indent=1))


def load_scene(path) -> Scene:
    return Scene.from_dict(json.loads(Path(path).read_text()))
