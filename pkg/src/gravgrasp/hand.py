"""Underactuated two-finger gripper: kinematics, collision boxes, grasp modes.

TCP frame: z is the approach axis (palm towards object), y is the closing
axis with the right finger on +y, x = y × z. The TCP sits at the centre of
the fingertip pads in the fully open state.

Each finger is a proximal link driven by one shared actuator angle plus a
passive distal link that can wrap inward once the proximal link is blocked.
Link dimensions approximate a 2F-85-class gripper; only the 85 mm stroke is
a hard number, everything else is a documented default.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry.mesh import TriangleMesh, box_mesh
from .geometry.transforms import Pose


class Link(str, enum.Enum):
    FingertipL = "FingertipL"
    FingertipR = "FingertipR"
    ProximalL = "ProximalL"
    ProximalR = "ProximalR"
    Palm = "Palm"

    @property
    def is_fingertip(self) -> bool:
        return self in (Link.FingertipL, Link.FingertipR)

    @property
    def side(self) -> str | None:
        return {"L": "L", "R": "R"}.get(self.value[-1])


class GraspMode(str, enum.Enum):
    Precision = "Precision"
    Power = "Power"


@dataclass(frozen=True)
class GripperParams:
    max_aperture: float = 0.085
    proximal_length: float = 0.055
    distal_length: float = 0.040
    palm_width: float = 0.09
    palm_depth: float = 0.04
    palm_breadth: float = 0.05
    finger_thickness: float = 0.012
    finger_width: float = 0.022
    pivot_offset: float = 0.030
    wrap_limit: float = 1.2
    grasp_force: float = 40.0
    mu_static: float = 0.75
    mu_dynamic: float = 0.5
    structural_force_cap: float = 200.0
    collision_margin: float = 2e-4

    def __post_init__(self):
        lengths = ("max_aperture", "proximal_length", "distal_length", "palm_width", "palm_depth",
                   "palm_breadth", "finger_thickness", "finger_width", "pivot_offset", "wrap_limit")
        for name in lengths:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.mu_dynamic <= self.mu_static:
            raise ValueError("require 0 < mu_dynamic <= mu_static")
        if not self.grasp_force > 0:
            raise ValueError("grasp_force must be positive")
        if self.structural_force_cap < self.grasp_force:
            raise ValueError("structural_force_cap must be >= grasp_force")
        if self.collision_margin < 0:
            raise ValueError("collision_margin must be non-negative")
        half_t = self.finger_thickness / 2
        for s in (self._sin_open, self._sin_closed):
            if abs(s) >= 1:
                raise ValueError("finger geometry cannot reach the requested aperture range")
        if self.pivot_offset < half_t:
            raise ValueError("pivot_offset must exceed half the finger thickness")

    @property
    def _sin_open(self) -> float:
        return (self.max_aperture / 2 + self.finger_thickness / 2 - self.pivot_offset) / self.proximal_length

    @property
    def _sin_closed(self) -> float:
        return (self.finger_thickness / 2 - self.pivot_offset) / self.proximal_length

    @property
    def theta_open(self) -> float:
        return float(np.arcsin(self._sin_open))

    @property
    def theta_closed(self) -> float:
        return float(np.arcsin(self._sin_closed))

    @property
    def pivot_z(self) -> float:
        """z of the proximal pivots, which is also the palm's front face."""
        return -(self.proximal_length * np.cos(self.theta_open) + self.distal_length / 2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FingerState:
    closure: tuple[float, float] = (0.0, 0.0)  # (left, right)
    distal_wrap: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "closure", tuple(float(c) for c in self.closure))
        object.__setattr__(self, "distal_wrap", tuple(float(w) for w in self.distal_wrap))
        if len(self.closure) != 2 or len(self.distal_wrap) != 2:
            raise ValueError("FingerState expects one value per finger")

    @classmethod
    def uniform(cls, closure: float, wrap: float = 0.0) -> FingerState:
        return cls((closure, closure), (wrap, wrap))

    def validate(self, params: GripperParams) -> None:
        for c in self.closure:
            if not (0.0 <= c <= 1.0) or not np.isfinite(c):
                raise ValueError(f"closure {c} outside [0, 1]")
        for w in self.distal_wrap:
            if not (0.0 <= w <= params.wrap_limit) or not np.isfinite(w):
                raise ValueError(f"distal wrap {w} outside [0, {params.wrap_limit}]")


# ------------------------------------------------------------------- boxes


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box with centre, rotation (columns are local axes) and half extents."""

    center: np.ndarray
    rotation: np.ndarray
    half: np.ndarray
    link: Link

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.center)

    def inflated(self, margin: float) -> OrientedBox:
        return OrientedBox(self.center, self.rotation, self.half + margin, self.link)

    def transformed(self, pose: Pose) -> OrientedBox:
        return OrientedBox(pose.transform_points(self.center[None])[0], pose.rotation @ self.rotation,
                           self.half, self.link)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half) @ self.rotation.T

    def sdf(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact signed distance and its gradient (outward) for each point."""
        q = (np.asarray(points) - self.center) @ self.rotation
        d = np.abs(q) - self.half
        outside = np.maximum(d, 0.0)
        n_out = np.linalg.norm(outside, axis=1)
        inside_val = np.minimum(d.max(axis=1), 0.0)
        s = n_out + inside_val
        sgn = np.where(q >= 0, 1.0, -1.0)
        g_local = np.where(
            (n_out > 0)[:, None],
            outside * sgn / np.where(n_out > 0, n_out, 1.0)[:, None],
            0.0,
        )
        inner = n_out <= 0
        if np.any(inner):
            k = np.argmax(d[inner], axis=1)
            gi = np.zeros((int(inner.sum()), 3))
            gi[np.arange(len(k)), k] = sgn[inner][np.arange(len(k)), k]
            g_local[inner] = gi
        return s, g_local @ self.rotation.T

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        q = (np.asarray(points) - self.center) @ self.rotation
        return np.all(np.abs(q) <= self.half + tol, axis=1)

    def to_mesh(self) -> TriangleMesh:
        return box_mesh(2 * self.half).transformed(self.pose)


def _link_box(start_yz, direction_yz, length, thickness, width, link) -> OrientedBox:
    a = np.array([0.0, direction_yz[0], direction_yz[1]])
    a /= np.linalg.norm(a)
    x = np.array([1.0, 0.0, 0.0])
    e2 = np.cross(a, x)
    centre = np.array([0.0, start_yz[0], start_yz[1]]) + a * length / 2
    return OrientedBox(centre, np.column_stack([x, e2, a]), np.array([width / 2, thickness / 2, length / 2]), link)


@dataclass(frozen=True)
class FingerGeometry:
    """Planar (y, z) points of one finger for a given state."""

    pivot: np.ndarray
    knuckle: np.ndarray
    tip: np.ndarray
    pad_center: np.ndarray
    proximal_dir: np.ndarray
    distal_dir: np.ndarray


def finger_geometry(params: GripperParams, closure: float, wrap: float, side: str) -> FingerGeometry:
    """Closed-form planar kinematics of one finger, mirrored for the left side."""
    theta = params.theta_open + closure * (params.theta_closed - params.theta_open)
    s = 1.0 if side == "R" else -1.0
    pivot = np.array([s * params.pivot_offset, params.pivot_z])
    d_p = np.array([s * np.sin(theta), np.cos(theta)])
    knuckle = pivot + params.proximal_length * d_p
    d_d = np.array([-s * np.sin(wrap), np.cos(wrap)])
    inward = np.array([-s * np.cos(wrap), -np.sin(wrap)])
    tip = knuckle + params.distal_length * d_d
    pad = knuckle + 0.5 * params.distal_length * d_d + 0.5 * params.finger_thickness * inward
    return FingerGeometry(pivot, knuckle, tip, pad, d_p, d_d)


def fingertip_gap(params: GripperParams, state: FingerState) -> float:
    """Signed y-distance between the inner pad centres (right minus left)."""
    left = finger_geometry(params, state.closure[0], state.distal_wrap[0], "L")
    right = finger_geometry(params, state.closure[1], state.distal_wrap[1], "R")
    return float(right.pad_center[0] - left.pad_center[0])


def closure_for_gap(params: GripperParams, gap: float) -> float:
    """Symmetric closure (no wrap) at which the pad gap equals ``gap``."""
    gap = float(np.clip(gap, 0.0, params.max_aperture))
    s = (gap / 2 + params.finger_thickness / 2 - params.pivot_offset) / params.proximal_length
    theta = np.arcsin(s)
    return float((theta - params.theta_open) / (params.theta_closed - params.theta_open))


def finger_configuration(params: GripperParams, state: FingerState) -> dict[Link, Pose]:
    """Poses of the five links in the TCP frame.

    A link pose puts its local z axis along the link and its origin at the
    link centre; the palm's origin is the centre of the palm block.
    """
    return {box.link: box.pose for box in link_boxes(params, state)}


def link_boxes(params: GripperParams, state: FingerState) -> list[OrientedBox]:
    """Exact link geometry as oriented boxes, ordered palm, proximal L/R, fingertip L/R."""
    state.validate(params)
    t, w = params.finger_thickness, params.finger_width
    palm = OrientedBox(
        np.array([0.0, 0.0, params.pivot_z - params.palm_depth / 2]),
        np.eye(3),
        np.array([params.palm_breadth, params.palm_width, params.palm_depth]) / 2,
        Link.Palm,
    )
    boxes = [palm]
    fingers = {}
    for i, side in enumerate("LR"):
        fingers[side] = finger_geometry(params, state.closure[i], state.distal_wrap[i], side)
    for side in "LR":
        g = fingers[side]
        boxes.append(_link_box(g.pivot, g.proximal_dir, params.proximal_length, t, w, Link(f"Proximal{side}")))
    for side in "LR":
        g = fingers[side]
        boxes.append(_link_box(g.knuckle, g.distal_dir, params.distal_length, t, w, Link(f"Fingertip{side}")))
    return boxes


def hand_collision_shapes(params: GripperParams, state: FingerState) -> list[OrientedBox]:
    """Conservative convex proxies: link boxes inflated by the collision margin."""
    return [b.inflated(params.collision_margin) for b in link_boxes(params, state)]


def hand_meshes(params: GripperParams, state: FingerState) -> list[TriangleMesh]:
    """Detailed link geometry as triangle meshes in the TCP frame."""
    return [b.to_mesh() for b in link_boxes(params, state)]


# ------------------------------------------------------------- grasp modes


def contact_regions(positions: np.ndarray, links, radius: float = 0.005) -> np.ndarray:
    """Region label per contact: single-linkage clusters within ``radius``
    among contacts on the same link.

    Labels are canonical (ordered by link name, then by the smallest member
    position), so they do not depend on the input order.
    """
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    names = np.array([Link(l).value for l in links])
    labels = np.empty(len(P), dtype=np.int64)
    keys = []
    for name in sorted(set(names.tolist())):
        idx = np.flatnonzero(names == name)
        pairs = np.array(sorted(cKDTree(P[idx]).query_pairs(radius)), dtype=np.int64).reshape(-1, 2)
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(idx), len(idx)))
        n_comp, comp = connected_components(graph, directed=False)
        for c in range(n_comp):
            members = idx[comp == c]
            smallest = min(tuple(P[m]) for m in members)
            keys.append(((name, smallest), members))
    keys.sort(key=lambda kv: kv[0])
    for label, (_, members) in enumerate(keys):
        labels[members] = label
    return labels


def classify_grasp_mode(contacts, radius: float = 0.005) -> GraspMode:
    """Power when a proximal link or the palm is touched and at least three
    distinct contact regions exist; Precision otherwise.

    ``contacts`` is a sequence of objects with ``position`` and ``link``
    attributes, or of ``(position, link)`` pairs. Contacts that already
    carry a ``region`` id are counted by id instead of re-clustered.
    """
    contacts = list(contacts)
    if not contacts:
        raise ValueError("cannot classify an empty contact set")
    pos, links = [], []
    for c in contacts:
        if hasattr(c, "link"):
            pos.append(c.position)
            links.append(Link(c.link))
        else:
            pos.append(c[0])
            links.append(Link(c[1]))
    tagged = [getattr(c, "region", None) for c in contacts]
    if all(r is not None for r in tagged):
        n_regions = len(set(tagged))
    else:
        n_regions = len(set(contact_regions(np.array(pos), links, radius).tolist()))
    structural = any(not l.is_fingertip for l in links)
    if structural and n_regions >= 3:
        return GraspMode.Power
    return GraspMode.Precision
