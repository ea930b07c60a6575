"""Distance, ray and intersection queries on triangle meshes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, TriangleMesh
from .transforms import Pose

_CHUNK = 1 << 18  # pair budget per vectorized block


def _chunks(n_rows: int, n_cols: int):
    step = max(1, _CHUNK // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def closest_point_on_triangles(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Closest points for every (point, triangle) pair.

    ``P`` has shape (N, 3), triangle corners (T, 3); returns (N, T, 3).
    Region classification follows the Voronoi-region method.
    """
    P = P[:, None, :]
    ab, ac = (B - A)[None], (C - A)[None]
    ap = P - A[None]
    d1 = np.einsum("ntk,ntk->nt", ab, ap)
    d2 = np.einsum("ntk,ntk->nt", ac, ap)
    bp = P - B[None]
    d3 = np.einsum("ntk,ntk->nt", ab, bp)
    d4 = np.einsum("ntk,ntk->nt", ac, bp)
    cp = P - C[None]
    d5 = np.einsum("ntk,ntk->nt", ab, cp)
    d6 = np.einsum("ntk,ntk->nt", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
    out = A[None] + v[..., None] * ab + w[..., None] * ac

    def assign(mask, value):
        nonlocal out
        out = np.where(mask[..., None], value, out)

    # edge regions (checked before vertices so vertex regions win on overlap)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), B[None] + t_bc[..., None] * (C - B)[None])
        t_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), A[None] + t_ac[..., None] * ac)
        t_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), A[None] + t_ab[..., None] * ab)
    assign((d6 >= 0) & (d5 <= d6), np.broadcast_to(C[None], out.shape))
    assign((d3 >= 0) & (d4 <= d3), np.broadcast_to(B[None], out.shape))
    assign((d1 <= 0) & (d2 <= 0), np.broadcast_to(A[None], out.shape))
    return out


def unsigned_distance(mesh: TriangleMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the surface and the index of the nearest triangle."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    A, B, C = mesh.corners
    dist = np.empty(len(P))
    tri = np.empty(len(P), dtype=np.int64)
    for sl in _chunks(len(P), len(A)):
        q = closest_point_on_triangles(P[sl], A, B, C)
        d2 = np.sum((q - P[sl, None, :]) ** 2, axis=2)
        k = np.argmin(d2, axis=1)
        tri[sl] = k
        dist[sl] = np.sqrt(d2[np.arange(len(k)), k])
    return dist, tri


def winding_number(mesh: TriangleMesh, points) -> np.ndarray:
    """Generalized winding number (1 inside, 0 outside a closed surface)."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    A, B, C = mesh.corners
    out = np.empty(len(P))
    for sl in _chunks(len(P), len(A)):
        a = A[None] - P[sl, None, :]
        b = B[None] - P[sl, None, :]
        c = C[None] - P[sl, None, :]
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        num = np.einsum("ntk,ntk->nt", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ntk,ntk->nt", a, b) * lc
               + np.einsum("ntk,ntk->nt", b, c) * la + np.einsum("ntk,ntk->nt", c, a) * lb)
        out[sl] = np.arctan2(num, den).sum(axis=1) / (2.0 * np.pi)
    return out


def contains(mesh: TriangleMesh, points) -> np.ndarray:
    return winding_number(mesh, points) > 0.5


@dataclass(frozen=True)
class DistanceResult:
    distance: np.ndarray
    signed: bool


def query_distance(mesh: TriangleMesh, points) -> DistanceResult:
    """Signed distance when the mesh is watertight, unsigned otherwise."""
    d, _ = unsigned_distance(mesh, points)
    if not mesh.watertight:
        return DistanceResult(d, False)
    inside = contains(mesh, points)
    return DistanceResult(np.where(inside, -d, d), True)


def signed_distance(mesh: TriangleMesh, point):
    """Negative inside, positive outside.

    Accepts one point (returns a float) or an (N, 3) array. Raises
    ``MeshError`` for open meshes; use :func:`query_distance` to fall back
    to unsigned distance instead.
    """
    if not mesh.watertight:
        raise MeshError("signed distance requires a watertight mesh")
    arr = np.asarray(point, dtype=np.float64)
    res = query_distance(mesh, arr.reshape(-1, 3)).distance
    return float(res[0]) if arr.ndim == 1 else res


# ------------------------------------------------------------------------- rays


def ray_triangle_hits(origins: np.ndarray, dirs: np.ndarray, A, B, C, eps: float = 1e-12) -> np.ndarray:
    """Nearest positive hit parameter per ray (inf where the ray misses)."""
    O = np.atleast_2d(origins)
    D = np.atleast_2d(dirs)
    if len(O) == 1 and len(D) > 1:
        O = np.broadcast_to(O, D.shape)
    e1, e2 = B - A, C - A
    t_best = np.full(len(D), np.inf)
    for sl in _chunks(len(D), len(A)):
        d = D[sl, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("tk,ntk->nt", e1, pvec)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = O[sl, None, :] - A[None]
        u = np.einsum("ntk,ntk->nt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("ntk,ntk->nt", d, qvec) * inv
        t = np.einsum("tk,ntk->nt", e2, qvec) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
        t = np.where(hit, t, np.inf)
        t_best[sl] = t.min(axis=1) if t.shape[1] else np.inf
    return t_best


def first_hit(mesh: TriangleMesh, origins, directions) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit parameter and triangle index per ray (inf / -1 on a miss)."""
    A, B, C = mesh.corners
    O = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(O) == 1 and len(D) > 1:
        O = np.broadcast_to(O, D.shape)
    e1, e2 = B - A, C - A
    t_best = np.full(len(D), np.inf)
    idx = np.full(len(D), -1, dtype=np.int64)
    for sl in _chunks(len(D), len(A)):
        d = D[sl, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("tk,ntk->nt", e1, pvec)
        ok = np.abs(det) > 1e-18
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = O[sl, None, :] - A[None]
        u = np.einsum("ntk,ntk->nt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("ntk,ntk->nt", d, qvec) * inv
        t = np.einsum("tk,ntk->nt", e2, qvec) * inv
        t = np.where(ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12), t, np.inf)
        k = np.argmin(t, axis=1)
        tb = t[np.arange(len(k)), k]
        t_best[sl] = tb
        idx[sl] = np.where(np.isfinite(tb), k, -1)
    return t_best, idx


def raycast(mesh: TriangleMesh, origins, directions, pose: Pose | None = None) -> np.ndarray:
    """First-hit distance along each ray in units of the direction length."""
    A, B, C = mesh.corners
    if pose is not None:
        A, B, C = (pose.transform_points(x) for x in (A, B, C))
    O = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    return ray_triangle_hits(O, D, A, B, C)


# ---------------------------------------------------------------- intersections


def segment_triangle_crossing(P0: np.ndarray, P1: np.ndarray, A, B, C) -> bool:
    """True if any segment crosses any triangle (closed)."""
    D = P1 - P0
    e1, e2 = B - A, C - A
    for sl in _chunks(len(P0), len(A)):
        d = D[sl, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("tk,ntk->nt", e1, pvec)
        ok = np.abs(det) > 1e-18
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = P0[sl, None, :] - A[None]
        u = np.einsum("ntk,ntk->nt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("ntk,ntk->nt", d, qvec) * inv
        t = np.einsum("tk,ntk->nt", e2, qvec) * inv
        if np.any(ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)):
            return True
    return False


def segment_segment_distance(P0, P1, Q0, Q1) -> np.ndarray:
    """Pairwise minimum distance between segment sets; shape (N, M)."""
    d1 = (P1 - P0)[:, None, :]
    d2 = (Q1 - Q0)[None, :, :]
    r = P0[:, None, :] - Q0[None, :, :]
    a = np.sum(d1 * d1, axis=2)
    e = np.sum(d2 * d2, axis=2)
    f = np.sum(d2 * r, axis=2)
    c = np.sum(d1 * r, axis=2)
    b = np.sum(d1 * d2, axis=2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-20, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        t_clip = np.clip(t, 0.0, 1.0)
        s = np.where(t != t_clip, np.clip((b * t_clip - c) / a, 0.0, 1.0), s)
    t = t_clip
    diff = r + s[..., None] * d1 - t[..., None] * d2
    return np.linalg.norm(diff, axis=2)


def _posed(mesh: TriangleMesh, pose: Pose | None):
    V = mesh.vertices if pose is None else pose.transform_points(mesh.vertices)
    F = mesh.triangles
    return V, F


def _min_vertex_tri(V_pts, V, F, limit: float) -> float:
    A, B, C = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    best = np.inf
    for sl in _chunks(len(V_pts), len(F)):
        q = closest_point_on_triangles(V_pts[sl], A, B, C)
        best = min(best, float(np.sqrt(np.min(np.sum((q - V_pts[sl, None, :]) ** 2, axis=2)))))
        if best < limit:
            break
    return best


def mesh_distance(a: TriangleMesh, pose_a: Pose | None, b: TriangleMesh, pose_b: Pose | None) -> float:
    """Minimum distance between two posed meshes; 0 when they overlap."""
    Va, Fa = _posed(a, pose_a)
    Vb, Fb = _posed(b, pose_b)
    if _overlap(a, Va, Fa, b, Vb, Fb):
        return 0.0
    return _separated_distance(Va, Fa, a.edges, Vb, Fb, b.edges, limit=0.0)


def _overlap(a, Va, Fa, b, Vb, Fb) -> bool:
    Ea, Eb = a.edges, b.edges
    if segment_triangle_crossing(Va[Ea[:, 0]], Va[Ea[:, 1]], Vb[Fb[:, 0]], Vb[Fb[:, 1]], Vb[Fb[:, 2]]):
        return True
    if segment_triangle_crossing(Vb[Eb[:, 0]], Vb[Eb[:, 1]], Va[Fa[:, 0]], Va[Fa[:, 1]], Va[Fa[:, 2]]):
        return True
    # full containment: one vertex of either mesh inside the other
    if b.watertight and contains(TriangleMesh(Vb, Fb), Va[:1])[0]:
        return True
    if a.watertight and contains(TriangleMesh(Va, Fa), Vb[:1])[0]:
        return True
    return False


def _separated_distance(Va, Fa, Ea, Vb, Fb, Eb, limit: float) -> float:
    best = _min_vertex_tri(Va, Vb, Fb, limit)
    if best < limit:
        return best
    best = min(best, _min_vertex_tri(Vb, Va, Fa, limit))
    if best < limit:
        return best
    Pa0, Pa1 = Va[Ea[:, 0]], Va[Ea[:, 1]]
    Qb0, Qb1 = Vb[Eb[:, 0]], Vb[Eb[:, 1]]
    step = max(1, _CHUNK // max(len(Eb), 1))
    for s in range(0, len(Ea), step):
        best = min(best, float(segment_segment_distance(Pa0[s:s + step], Pa1[s:s + step], Qb0, Qb1).min()))
        if best < limit:
            break
    return best


def mesh_intersects(a: TriangleMesh, pose_a: Pose | None, b: TriangleMesh, pose_b: Pose | None,
                    clearance: float = 0.0) -> bool:
    """True if the posed meshes overlap or come closer than ``clearance``."""
    Va, Fa = _posed(a, pose_a)
    Vb, Fb = _posed(b, pose_b)
    lo_a, hi_a = Va.min(axis=0), Va.max(axis=0)
    lo_b, hi_b = Vb.min(axis=0), Vb.max(axis=0)
    gap = np.maximum(0.0, np.maximum(lo_a - hi_b, lo_b - hi_a))
    if np.linalg.norm(gap) >= clearance and np.any(gap > 0):
        return False
    if _overlap(a, Va, Fa, b, Vb, Fb):
        return True
    if clearance <= 0:
        return False
    return _separated_distance(Va, Fa, a.edges, Vb, Fb, b.edges, limit=clearance) < clearance
