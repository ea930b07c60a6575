"""Gravityless quasi-static closure of the gripper on a free-floating object.

The hand stays fixed in its TCP frame while the object pose is free. Each
closure increment is followed by a settle step that moves the object
(Gauss-Newton on the squared penetration of object surface samples into
the link boxes). When settling cannot remove the penetration the object is
trapped; the increment is bisected back to first contact, and whichever
links are blocked decide how each finger continues:

* fingertip blocked: the finger stops;
* proximal link blocked: the passive distal joint starts wrapping inward;
* anything blocked while wrapping: the finger stops.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry.mesh import TriangleMesh, sample_surface_grid
from .geometry.query import contains
from .geometry.transforms import Pose, axis_angle_to_matrix
from .hand import (
    FingerState,
    GraspMode,
    GripperParams,
    Link,
    OrientedBox,
    classify_grasp_mode,
    contact_regions,
    fingertip_gap,
    link_boxes,
)
from .sampling import GraspCandidate


class ContactKind(str, enum.Enum):
    Squeeze = "Squeeze"
    Constraint = "Constraint"


class FailureReason(str, enum.Enum):
    NoContact = "NoContact"
    Ejected = "Ejected"
    InitialPenetration = "InitialPenetration"


class ClosureFailure(Exception):
    def __init__(self, reason: FailureReason, detail: str = ""):
        self.reason = FailureReason(reason)
        super().__init__(f"{self.reason.value}: {detail}" if detail else self.reason.value)


@dataclass(frozen=True)
class ClosureConfig:
    closure_step: float = 0.005
    wrap_step_fraction: float = 0.005
    settle_tol: float = 1e-6
    trap_tol: float = 1e-5
    initial_penetration_tol: float = 1e-4
    contact_distance: float = 5e-4
    grazing_cos: float = 0.3
    sample_spacing: float = 0.0025
    region_radius: float = 0.005
    eject_radius: float = 0.25
    max_settle_iters: int = 40
    bisect_iters: int = 12
    divergence_limit: int = 3
    max_steps: int = 4000

    def __post_init__(self):
        if not 0 < self.closure_step <= 1 or not 0 < self.wrap_step_fraction <= 1:
            raise ValueError("closure steps must lie in (0, 1]")
        if not 0 < self.settle_tol < self.trap_tol < self.initial_penetration_tol:
            raise ValueError("require 0 < settle_tol < trap_tol < initial_penetration_tol")
        if self.sample_spacing <= 0 or self.contact_distance <= 0:
            raise ValueError("spacings must be positive")
        if not 0 <= self.grazing_cos < 1:
            raise ValueError("grazing_cos must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class ContactPoint:
    position: np.ndarray  # object frame
    normal: np.ndarray  # unit, pointing into the object
    link: Link
    kind: ContactKind
    region: int | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("contact normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "kind", ContactKind(self.kind))

    def to_dict(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "normal": [float(x) for x in self.normal],
            "link": self.link.value,
            "kind": self.kind.value,
            "region": self.region,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ContactPoint:
        return cls(np.array(d["position"]), np.array(d["normal"]), Link(d["link"]),
                   ContactKind(d["kind"]), d.get("region"))


def kind_for_link(link: Link) -> ContactKind:
    return ContactKind.Squeeze if Link(link).is_fingertip else ContactKind.Constraint


@dataclass(frozen=True, eq=False)
class SettledGrasp:
    hand_pose: Pose  # TCP in the object frame after settling
    contacts: tuple[ContactPoint, ...]
    mode: GraspMode
    width: float
    finger_state: FingerState = field(default_factory=FingerState)
    candidate_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(self.contacts))
        if not self.contacts:
            raise ValueError("a settled grasp needs at least one contact")

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "hand_pose": self.hand_pose.to_dict(),
            "contacts": [c.to_dict() for c in self.contacts],
            "mode": self.mode.value,
            "width": float(self.width),
            "finger_state": {
                "closure": list(self.finger_state.closure),
                "distal_wrap": list(self.finger_state.distal_wrap),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> SettledGrasp:
        fs = d.get("finger_state", {})
        return cls(
            hand_pose=Pose.from_dict(d["hand_pose"]),
            contacts=tuple(ContactPoint.from_dict(c) for c in d["contacts"]),
            mode=GraspMode(d["mode"]),
            width=float(d["width"]),
            finger_state=FingerState(tuple(fs.get("closure", (0, 0))), tuple(fs.get("distal_wrap", (0, 0)))),
            candidate_id=str(d.get("candidate_id", "")),
        )


# --------------------------------------------------------------- settle


class _Body:
    """Object surface samples plus a pose (R, t) mapping object -> hand frame."""

    def __init__(self, points: np.ndarray, com: np.ndarray, scale: float):
        self.points = points
        self.com = com
        self.scale = scale  # converts rotation to length for balanced steps

    def world(self, R, t, idx=None):
        P = self.points if idx is None else self.points[idx]
        return P @ R.T + t


def _residuals(P: np.ndarray, boxes: list[OrientedBox]):
    """Penetrating (point, box) pairs: depths (negative), gradients, point ids, box ids."""
    s_all, g_all, pid, bid = [], [], [], []
    for k, box in enumerate(boxes):
        # only points strictly inside a box penetrate it
        q = np.abs((P - box.center) @ box.rotation)
        near = np.flatnonzero(np.all(q < box.half, axis=1))
        if len(near) == 0:
            continue
        s, g = box.sdf(P[near])
        s_all.append(s)
        g_all.append(g)
        pid.append(near)
        bid.append(np.full(len(near), k))
    if not s_all:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(s_all), np.concatenate(g_all), np.concatenate(pid), np.concatenate(bid)


def _apply_twist(R, t, c_h, delta, scale):
    dt = delta[:3]
    dw = delta[3:] / scale
    Rd = axis_angle_to_matrix(dw, float(np.linalg.norm(dw))) if np.any(dw) else np.eye(3)
    return Rd @ R, Rd @ (t - c_h) + c_h + dt


@dataclass
class _SettleResult:
    R: np.ndarray
    t: np.ndarray
    max_pen: float
    converged: bool
    diverged: bool
    penetrating_boxes: frozenset


def _near_boxes(P: np.ndarray, boxes, pad: float) -> np.ndarray:
    keep = np.zeros(len(P), dtype=bool)
    for box in boxes:
        q = np.abs((P - box.center) @ box.rotation)
        keep |= np.all(q < box.half + pad, axis=1)
    return keep


def _settle(body: _Body, R, t, boxes, cfg: ClosureConfig, candidates: np.ndarray,
            pad: float = 0.003) -> _SettleResult:
    """Settle on the samples near the boxes, then verify against all candidates."""
    res = None
    for _ in range(4):
        P = body.world(R, t, candidates)
        if res is not None:
            s, *_ = _residuals(P, boxes)
            if len(s) == 0 or -s.min() <= max(res.max_pen, cfg.settle_tol):
                return res
        subset = candidates[_near_boxes(P, boxes, pad)]
        res = _settle_subset(body, R, t, boxes, cfg, subset)
        R, t = res.R, res.t
        pad *= 2
    return res


def _settle_subset(body: _Body, R, t, boxes, cfg: ClosureConfig, candidates: np.ndarray) -> _SettleResult:
    """Move the object to minimise E = sum(min(s, 0)^2) over candidate points."""
    P = body.world(R, t, candidates)
    s, g, pid, bid = _residuals(P, boxes)
    energy = float(np.dot(s, s))
    for _ in range(cfg.max_settle_iters):
        if len(s) == 0 or -s.min() <= cfg.settle_tol:
            return _SettleResult(R, t, float(max(0.0, -s.min())) if len(s) else 0.0, True, False, frozenset())
        c_h = R @ body.com + t
        lever = P[pid] - c_h
        J = np.hstack([g, np.cross(lever, g) / body.scale])
        H = J.T @ J
        H += np.eye(6) * (1e-12 + 1e-9 * np.trace(H))
        delta = -np.linalg.solve(H, J.T @ s)
        step = 1.0
        improved = False
        for _ls in range(10):
            R2, t2 = _apply_twist(R, t, c_h, step * delta, body.scale)
            P2 = body.world(R2, t2, candidates)
            s2, g2, pid2, bid2 = _residuals(P2, boxes)
            e2 = float(np.dot(s2, s2))
            if e2 < energy:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        rel = (energy - e2) / max(energy, 1e-300)
        R, t, P, s, g, pid, bid, energy = R2, t2, P2, s2, g2, pid2, bid2, e2
        if rel < 1e-6:
            break
    max_pen = float(max(0.0, -s.min())) if len(s) else 0.0
    converged = max_pen <= cfg.settle_tol
    pen_boxes = frozenset(int(b) for b in np.unique(bid[s < -0.1 * cfg.trap_tol])) if len(s) else frozenset()
    # a settle that keeps improving until the iteration cap has not stalled
    diverged = not converged and energy > 0 and max_pen > cfg.initial_penetration_tol * 10
    return _SettleResult(R, t, max_pen, converged, diverged, pen_boxes)


# --------------------------------------------------------------- closure


@dataclass
class _Finger:
    closure: float = 0.0
    wrap: float = 0.0
    phase: str = "close"  # close -> wrap -> done


def _state(fingers) -> FingerState:
    return FingerState((fingers[0].closure, fingers[1].closure), (fingers[0].wrap, fingers[1].wrap))


def _advance(fingers, frac: float, params: GripperParams, cfg: ClosureConfig, mult: float = 1.0):
    out = []
    for f in fingers:
        g = _Finger(f.closure, f.wrap, f.phase)
        if f.phase == "close":
            g.closure = min(1.0, f.closure + frac * mult * cfg.closure_step)
        elif f.phase == "wrap":
            g.wrap = min(params.wrap_limit, f.wrap + frac * mult * cfg.wrap_step_fraction * params.wrap_limit)
        out.append(g)
    return out


_LINK_SIDE = {Link.FingertipL: 0, Link.ProximalL: 0, Link.FingertipR: 1, Link.ProximalR: 1}


def _box_samples(box: OrientedBox) -> np.ndarray:
    g = np.array([-1.0, 0.0, 1.0])
    signs = np.array([[a, b, c] for a in g for b in g for c in g if (a, b, c) != (0, 0, 0)])
    return box.center + (signs * box.half) @ box.rotation.T


def _free_clearance(body, R, t, boxes, moving_ids, idx):
    if not moving_ids:
        return np.inf
    P = body.world(R, t, idx)
    best = np.inf
    for k in moving_ids:
        box = boxes[k]
        # the largest per-axis excess is a lower bound on the box distance
        lb = (np.abs((P - box.center) @ box.rotation) - box.half).max(axis=1)
        if len(lb):
            best = min(best, float(lb.min()))
    return best


def simulate_closure(params: GripperParams, mesh: TriangleMesh, candidate: GraspCandidate,
                     cfg: ClosureConfig | None = None, samples=None) -> SettledGrasp:
    """Close the hand on ``mesh`` from ``candidate`` and return the settled grasp.

    Raises :class:`ClosureFailure` when the hand starts in collision, closes
    on nothing, or pushes the object out of the hand.
    """
    cfg = cfg or ClosureConfig()
    if samples is None:
        samples = sample_surface_grid(mesh, cfg.sample_spacing)
    com = mesh.center_of_mass
    scale = max(float(np.max(mesh.extents)) / 2.0, 1e-3)
    body = _Body(samples.points, com, scale)
    X0 = candidate.pose.inverse()
    R, t = X0.rotation.copy(), X0.translation.copy()

    fingers = [_Finger(), _Finger()]
    boxes = link_boxes(params, _state(fingers))

    # hand entirely inside the object is invisible to surface samples
    if mesh.watertight:
        probe = np.vstack([_box_samples(b) for b in boxes])
        inside = contains(mesh, X0.inverse().transform_points(probe))
        if np.any(inside):
            raise ClosureFailure(FailureReason.InitialPenetration, "hand geometry inside the object")
    all_idx = np.arange(len(body.points))
    P = body.world(R, t)
    s, *_ = _residuals(P, boxes)
    if len(s) and -s.min() > cfg.initial_penetration_tol:
        raise ClosureFailure(FailureReason.InitialPenetration, f"depth {-s.min():.2e} m")

    # candidate points: samples inside the hand's swept bounding box (refreshed as the object moves)
    reach = params.proximal_length + params.distal_length + params.finger_thickness
    margin = 0.01
    lo_box = np.array([-max(params.palm_breadth, params.finger_width) / 2,
                       -(params.pivot_offset + reach), params.pivot_z - params.palm_depth]) - margin
    hi_box = np.array([max(params.palm_breadth, params.finger_width) / 2,
                       params.pivot_offset + reach, params.pivot_z + reach]) + margin

    def near_hand(R, t):
        Pw = body.world(R, t)
        return np.flatnonzero(np.all((Pw >= lo_box) & (Pw <= hi_box), axis=1))

    idx = near_hand(R, t)
    res = _settle(body, R, t, boxes, cfg, idx)
    R, t = res.R, res.t
    touched = False
    divergences = 0
    steps = 0
    speed_close = (params.proximal_length + params.distal_length) * abs(params.theta_open - params.theta_closed)
    speed_wrap = params.distal_length * math.hypot(1.0, params.finger_thickness / params.distal_length) \
        * params.wrap_limit
    anchor, R_anchor = t.copy(), R.copy()

    while any(f.phase != "done" for f in fingers):
        steps += 1
        if steps > cfg.max_steps:
            break
        moving = [i for i, f in enumerate(fingers) if f.phase != "done"]
        moving_ids = [k for k, b in enumerate(boxes) if b.link != Link.Palm and _LINK_SIDE[b.link] in moving]
        # conservative fast-forward through free space; never skips a contact
        clearance = _free_clearance(body, R, t, boxes, moving_ids, idx)
        speed = max(speed_close * cfg.closure_step, speed_wrap * cfg.wrap_step_fraction)
        mult = max(1.0, math.floor(0.5 * clearance / speed)) if np.isfinite(clearance) else 1e6
        trial = _advance(fingers, 1.0, params, cfg, mult)
        boxes_t = link_boxes(params, _state(trial))
        res = _settle(body, R, t, boxes_t, cfg, idx)
        if res.max_pen <= cfg.trap_tol:
            divergences = 0
            if res.max_pen > 0 or res.penetrating_boxes:
                touched = True
            if not np.allclose(res.t, t) or not np.allclose(res.R, R):
                touched = True
            fingers, boxes, R, t = trial, boxes_t, res.R, res.t
        else:
            divergences = divergences + 1 if res.diverged else 0
            if divergences >= cfg.divergence_limit:
                raise ClosureFailure(FailureReason.Ejected, "settling diverged repeatedly")
            touched = True
            # bisect the fraction of the (single) increment that stays feasible
            lo, hi, hi_res = 0.0, 1.0, res
            lo_state = (fingers, boxes, R, t)
            base = fingers
            step_mult = mult
            if mult > 1:
                # restart from the last free position on the unit grid
                lo_f = _advance(base, 1.0, params, cfg, mult - 1)
                lo_boxes = link_boxes(params, _state(lo_f))
                lo_res = _settle(body, R, t, lo_boxes, cfg, idx)
                if lo_res.max_pen <= cfg.trap_tol:
                    base, step_mult = lo_f, 1.0
                    lo_state = (lo_f, lo_boxes, lo_res.R, lo_res.t)
            for _ in range(cfg.bisect_iters):
                mid = 0.5 * (lo + hi)
                tr = _advance(base, mid, params, cfg, step_mult)
                bx = link_boxes(params, _state(tr))
                r = _settle(body, lo_state[2], lo_state[3], bx, cfg, idx)
                if r.max_pen <= cfg.trap_tol:
                    lo, lo_state = mid, (tr, bx, r.R, r.t)
                else:
                    hi, hi_res = mid, r
            fingers, boxes, R, t = (list(lo_state[0]), lo_state[1], lo_state[2], lo_state[3])
            blocked_links = {boxes[k].link for k in hi_res.penetrating_boxes}
            before = [f.phase for f in fingers]
            for i, f in enumerate(fingers):
                if f.phase == "done":
                    continue
                side = "LR"[i]
                tip = Link(f"Fingertip{side}") in blocked_links
                prox = Link(f"Proximal{side}") in blocked_links
                if f.phase == "close":
                    if tip:
                        f.phase = "done"
                    elif prox:
                        f.phase = "wrap"
                elif tip or prox:
                    f.phase = "done"
            if lo == 0.0 and [f.phase for f in fingers] == before:
                # jammed without a moving link to blame: stop rather than spin
                for f in fingers:
                    f.phase = "done"
        for f in fingers:
            if f.phase == "close" and f.closure >= 1.0:
                f.phase = "done"
            elif f.phase == "wrap" and f.wrap >= params.wrap_limit:
                f.phase = "done"
        com_h = R @ com + t
        if touched and np.linalg.norm(com_h) > cfg.eject_radius:
            raise ClosureFailure(FailureReason.Ejected, "object left the hand")
        if np.linalg.norm(t - anchor) > 0.5 * margin or not np.allclose(R, R_anchor, atol=0.1 * margin / scale):
            idx = near_hand(R, t)
            anchor, R_anchor = t.copy(), R.copy()

    contacts = _contacts_at(body, R, t, boxes, cfg, samples.points, samples.normals)
    if not contacts:
        if touched:
            raise ClosureFailure(FailureReason.Ejected, "contact lost during closure")
        raise ClosureFailure(FailureReason.NoContact, "hand closed without touching the object")
    state = _state(fingers)
    width = float(np.clip(fingertip_gap(params, state), 0.0, params.max_aperture))
    hand_pose = Pose(R, t).inverse()
    return SettledGrasp(hand_pose, tuple(contacts), classify_grasp_mode(contacts, cfg.region_radius),
                        width, state, candidate.id)


def _extreme_points(P: np.ndarray) -> np.ndarray:
    """Indices of up to four extreme points of a planar-ish patch."""
    if len(P) <= 4:
        return np.arange(len(P))
    c = P.mean(axis=0)
    _, _, Vt = np.linalg.svd(P - c, full_matrices=False)
    picks = []
    for axis in Vt[:2]:
        proj = (P - c) @ axis
        for k in (int(np.argmin(proj)), int(np.argmax(proj))):
            if k not in picks:
                picks.append(k)
    return np.array(sorted(picks))


def _contacts_at(body: _Body, R, t, boxes, cfg: ClosureConfig, points_obj: np.ndarray,
                 normals_obj: np.ndarray) -> list[ContactPoint]:
    P = points_obj @ R.T + t
    pos, nrm, links = [], [], []
    for box in boxes:
        r = np.linalg.norm(box.half) + cfg.contact_distance
        near = np.flatnonzero(np.sum((P - box.center) ** 2, axis=1) <= r * r)
        if len(near) == 0:
            continue
        s, g = box.sdf(P[near])
        g = g @ R  # hand -> object frame
        # a sample beside a flush link face sees that face's normal tangent to the surface
        facing = -np.einsum("ij,ij->i", g, normals_obj[near]) >= cfg.grazing_cos
        m = (s <= cfg.contact_distance) & facing
        if not np.any(m):
            continue
        pos.append(points_obj[near[m]])
        nrm.append(g[m])
        links += [box.link] * int(m.sum())
    if not pos:
        return []
    pos = np.concatenate(pos)
    nrm = np.concatenate(nrm)
    regions = contact_regions(pos, links, cfg.region_radius)
    out = []
    for reg in range(int(regions.max()) + 1):
        members = np.flatnonzero(regions == reg)
        # order members canonically so the reduction is input-order free
        order = np.lexsort(pos[members].T[::-1])
        members = members[order]
        for k in _extreme_points(pos[members]):
            j = members[k]
            n = nrm[j]
            if np.linalg.norm(n) == 0:
                continue
            out.append(ContactPoint(pos[j], n, links[j], kind_for_link(links[j]), int(reg)))
    return out


def extract_contacts(settled: SettledGrasp, radius: float = 0.005) -> list[ContactPoint]:
    """One representative contact per region (mean position, mean normal).

    Contacts carrying a region id keep it; the others are clustered with
    the ``radius`` rule.
    """
    contacts = list(settled.contacts) if isinstance(settled, SettledGrasp) else list(settled)
    if not contacts:
        return []
    if all(c.region is not None for c in contacts):
        ids = sorted({c.region for c in contacts})
        remap = {r: k for k, r in enumerate(ids)}
        regions = np.array([remap[c.region] for c in contacts])
    else:
        P = np.array([c.position for c in contacts])
        regions = contact_regions(P, [c.link for c in contacts], radius)
    out = []
    for reg in range(int(regions.max()) + 1):
        members = [contacts[i] for i in np.flatnonzero(regions == reg)]
        n = np.sum([m.normal for m in members], axis=0)
        if np.linalg.norm(n) == 0:
            n = members[0].normal
        out.append(ContactPoint(np.mean([m.position for m in members], axis=0), n, members[0].link,
                                kind_for_link(members[0].link), reg))
    return out
