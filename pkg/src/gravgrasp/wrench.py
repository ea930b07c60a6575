"""Disturbance-rejection scoring of settled grasps.

A grasp resists an external force F through the object's centre of mass
when contact forces inside linearized friction cones can cancel F with zero
net torque about the COM. The normal load each contact group can supply is
capped: fingertip (squeeze) contacts share the actuator force per finger,
contacts pressed into a proximal link or the palm are structurally backed
up to a larger cap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .closure import ContactKind, ContactPoint, SettledGrasp
from .hand import GripperParams

log = logging.getLogger(__name__)

DIRECTIONS = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])
DIRECTION_LABELS = ("+x", "-x", "+y", "-y", "+z", "-z")
F_MAX = 500.0
RESOLUTION = 0.1


@dataclass(frozen=True)
class ContactForceLimits:
    squeeze_cap: float = 40.0
    constraint_cap: float = 200.0
    mu: float = 0.75
    cone_edges: int = 8

    def __post_init__(self):
        if not (self.squeeze_cap > 0 and self.constraint_cap > 0):
            raise ValueError("force caps must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.cone_edges < 4:
            raise ValueError("cone_edges must be at least 4")

    @classmethod
    def from_gripper(cls, params: GripperParams, cone_edges: int = 8) -> ContactForceLimits:
        return cls(params.grasp_force, params.structural_force_cap, params.mu_static, cone_edges)

    def scaled(self, k: float) -> ContactForceLimits:
        return ContactForceLimits(self.squeeze_cap * k, self.constraint_cap * k, self.mu, self.cone_edges)


@dataclass(frozen=True)
class DisturbanceRejectionScore:
    forces: np.ndarray

    directions = DIRECTIONS

    def __post_init__(self):
        f = np.asarray(self.forces, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise ValueError("scores must be finite and non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "forces", f)

    def to_list(self) -> list[float]:
        return [float(x) for x in self.forces]


def tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tangents: t1 = n x e_k with e_k the axis least aligned with n."""
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def cap_groups(contacts) -> list[tuple[list[int], ContactKind]]:
    """Index groups sharing one normal-force budget.

    Squeeze contacts are pooled per finger side; constraint contacts per
    region (or alone when they carry no region id).
    """
    groups: dict[tuple, list[int]] = {}
    kinds: dict[tuple, ContactKind] = {}
    for i, c in enumerate(contacts):
        if c.kind == ContactKind.Squeeze:
            key = ("squeeze", c.link.side or c.link.value)
        elif c.region is not None:
            key = ("constraint", c.region)
        else:
            key = ("single", i)
        groups.setdefault(key, []).append(i)
        kinds[key] = c.kind
    return [(groups[k], kinds[k]) for k in sorted(groups, key=lambda k: (k[0], str(k[1])))]


def _assemble(contacts, com, limits: ContactForceLimits):
    m = limits.cone_edges
    ang = 2.0 * np.pi * np.arange(m) / m
    n_c = len(contacts)
    P = np.array([c.position for c in contacts]) - np.asarray(com, dtype=np.float64)
    L = max(float(np.max(np.linalg.norm(P, axis=1))), 1e-3)
    A = np.zeros((6, n_c * m))
    for i, c in enumerate(contacts):
        t1, t2 = tangent_basis(c.normal)
        edges = c.normal[None, :] + limits.mu * (np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2)
        A[:3, i * m:(i + 1) * m] = edges.T
        A[3:, i * m:(i + 1) * m] = np.cross(P[i], edges).T / L
    groups = cap_groups(contacts)
    G = np.zeros((len(groups), n_c * m))
    caps = np.zeros(len(groups))
    for g, (members, kind) in enumerate(groups):
        for i in members:
            G[g, i * m:(i + 1) * m] = 1.0  # each edge has unit normal component
        caps[g] = limits.squeeze_cap if kind == ContactKind.Squeeze else limits.constraint_cap
    return A, G, caps


def _feasible(system, F: np.ndarray) -> bool:
    A, G, caps = system
    b = np.concatenate([-F, np.zeros(3)])
    res = linprog(np.zeros(A.shape[1]), A_ub=G, b_ub=caps, A_eq=A, b_eq=b,
                  bounds=(0, None), method="highs")
    return res.status == 0


def equilibrium_feasible(contacts, com, external_force, limits: ContactForceLimits) -> bool:
    """Whether capped friction-cone forces can balance ``external_force`` at the COM."""
    contacts = list(contacts)
    F = np.asarray(external_force, dtype=np.float64).reshape(3)
    if not contacts:
        return bool(np.allclose(F, 0.0))
    return _feasible(_assemble(contacts, com, limits), F)


def max_resisted_force(settled, com, direction, limits: ContactForceLimits,
                       f_max: float = F_MAX, resolution: float = RESOLUTION) -> float:
    """Largest force magnitude along ``direction`` the grasp withstands.

    Bisection on LP feasibility down to ``resolution``; saturates at
    ``f_max``. ``settled`` may be a SettledGrasp or a contact list.
    """
    contacts = _contacts_of(settled)
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not contacts:
        return 0.0
    system = _assemble(contacts, com, limits)
    if _feasible(system, f_max * d):
        return float(f_max)
    lo, hi = 0.0, float(f_max)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _feasible(system, mid * d):
            lo = mid
        else:
            hi = mid
    return lo


def disturbance_rejection_score(settled, com, limits: ContactForceLimits, **kw) -> DisturbanceRejectionScore:
    """Max resisted force along +x, -x, +y, -y, +z, -z of the object frame."""
    return DisturbanceRejectionScore(np.array([max_resisted_force(settled, com, d, limits, **kw)
                                               for d in DIRECTIONS]))


def _contacts_of(settled) -> list[ContactPoint]:
    if settled is None:
        return []
    if isinstance(settled, SettledGrasp):
        return list(settled.contacts)
    return list(settled)


# ------------------------------------------------------------ ramp oracle


def _ramp_system(contacts, com, limits: ContactForceLimits):
    """Least-squares form [[W, 0], [S, I]] [x; slack] = [w; caps], built from scratch."""
    m = limits.cone_edges
    com = np.asarray(com, dtype=np.float64)
    reach = max(max(float(np.linalg.norm(c.position - com)) for c in contacts), 1e-3)
    cols = []
    for c in contacts:
        n = c.normal
        k = int(np.argmin(np.abs(n)))
        axis = np.eye(3)[k]
        u = np.cross(n, axis)
        u = u / np.linalg.norm(u)
        v = np.cross(n, u)
        r = c.position - com
        for j in range(m):
            a = 2.0 * math.pi * j / m
            f = n + limits.mu * (math.cos(a) * u + math.sin(a) * v)
            tau = np.cross(r, f) / reach
            cols.append(np.concatenate([f, tau]))
    W = np.array(cols).T
    budget_keys, budget_caps, owner = [], [], []
    for i, c in enumerate(contacts):
        if c.kind == ContactKind.Squeeze:
            key, cap = ("S", c.link.side or c.link.value), limits.squeeze_cap
        elif c.region is not None:
            key, cap = ("C", c.region), limits.constraint_cap
        else:
            key, cap = ("U", i), limits.constraint_cap
        if key not in budget_keys:
            budget_keys.append(key)
            budget_caps.append(cap)
        owner.append(budget_keys.index(key))
    S = np.zeros((len(budget_keys), W.shape[1]))
    for i, g in enumerate(owner):
        S[g, i * m:(i + 1) * m] = 1.0
    caps = np.array(budget_caps)
    top = np.hstack([W, np.zeros((6, len(caps)))])
    bottom = np.hstack([S / caps[:, None], np.eye(len(caps)) / caps[:, None]])
    return top, bottom


def _held(top, bottom, force: np.ndarray, tol: float) -> bool:
    M = np.vstack([top, bottom])
    rhs = np.concatenate([-force, np.zeros(3), np.ones(bottom.shape[0])])
    # bounded-variable least squares: an exact active-set solve, unlike scipy's nnls
    x = lsq_linear(M, rhs, bounds=(0.0, np.inf), method="bvls", tol=1e-12).x
    resid = float(np.linalg.norm(M @ x - rhs))
    return resid <= tol * max(1.0, float(np.linalg.norm(force)))


def force_ramp_oracle(settled, com, direction, step: float = 1.0, limits: ContactForceLimits | None = None,
                      refinements: int = 1, f_max: float = F_MAX, tol: float = 1e-6) -> float:
    """Ramp a COM force along ``direction`` until the contacts let go.

    At each stage the contact forces are re-solved from scratch as a
    non-negative least-squares problem; a non-zero residual means no
    admissible force distribution holds the object and it escapes. After
    the first escape the ramp restarts from the last held stage with a ten
    times finer step, ``refinements`` times.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    limits = limits or ContactForceLimits()
    contacts = _contacts_of(settled)
    if not contacts:
        return 0.0
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    top, bottom = _ramp_system(contacts, com, limits)
    held = 0.0
    for level in range(refinements + 1):
        h = step / (10.0 ** level)
        while held + h <= f_max + 1e-12:
            if not _held(top, bottom, (held + h) * d, tol):
                break
            held += h
        else:
            return float(min(held, f_max))
    return float(held)
