"""Triangle meshes: validation, OBJ/STL I/O, primitives and surface sampling."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-14


class MeshError(ValueError):
    """Raised for unreadable, empty or invalid meshes."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=np.float64)
        F = np.array(self.triangles, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3 or len(V) == 0:
            raise MeshError("mesh has no vertices")
        if F.ndim != 2 or F.shape[1] != 3 or len(F) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(V)):
            raise MeshError("mesh has non-finite vertex coordinates")
        if F.min() < 0 or F.max() >= len(V):
            raise MeshError("triangle index out of range")
        area = 0.5 * np.linalg.norm(
            np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1
        )
        F = F[area > DEGENERATE_AREA]
        if len(F) == 0:
            raise MeshError("all triangles are degenerate")
        V.setflags(write=False)
        F.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        V, F = self.vertices, self.triangles
        return V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]

    @cached_property
    def face_normals(self) -> np.ndarray:
        a, b, c = self.corners
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def areas(self) -> np.ndarray:
        a, b, c = self.corners
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex-index pairs."""
        F = self.triangles
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def watertight(self) -> bool:
        F = self.triangles
        directed = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        und, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
        if np.any(counts != 2):
            return False
        # every undirected edge must be traversed once in each direction
        uniq_dir = np.unique(directed, axis=0)
        return len(uniq_dir) == len(directed)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def extents(self) -> np.ndarray:
        b = self.bounds
        return b[1] - b[0]

    @cached_property
    def volume(self) -> float:
        a, b, c = self.corners
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    @cached_property
    def center_of_mass(self) -> np.ndarray:
        """Centroid of the enclosed solid (uniform density); area centroid if open."""
        a, b, c = self.corners
        vol = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
        total = vol.sum()
        if not self.watertight or abs(total) < 1e-15:
            w = self.areas
            return ((a + b + c) / 3.0 * w[:, None]).sum(axis=0) / w.sum()
        return ((a + b + c) / 4.0 * vol[:, None]).sum(axis=0) / total

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()

    def transformed(self, pose) -> TriangleMesh:
        return TriangleMesh(pose.transform_points(self.vertices), self.triangles)

    def scaled(self, scale: float) -> TriangleMesh:
        return TriangleMesh(self.vertices * scale, self.triangles)


# --------------------------------------------------------------------------- I/O


def weld_vertices(vertices: np.ndarray, triangles: np.ndarray, tol: float = 1e-9):
    """Merge vertices closer than ``tol`` (STL stores every corner separately)."""
    keys = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    new_vertices = vertices[np.sort(first)]
    return new_vertices, remap[inverse.reshape(-1)][triangles]


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise MeshError(f"OBJ parse error on line {lineno}: {raw!r}") from exc
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_stl(data: bytes):
    if len(data) >= 84:
        (n,) = struct.unpack("<I", data[80:84])
        if 84 + 50 * n == len(data):
            rec = np.frombuffer(data, dtype=np.dtype([
                ("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")
            ]), count=n, offset=84)
            tris = rec["v"].astype(np.float64).reshape(-1, 3)
            return weld_vertices(tris, np.arange(3 * n).reshape(-1, 3))
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MeshError("STL is neither valid binary nor ASCII") from exc
    coords = []
    for raw in text.splitlines():
        parts = raw.strip().split()
        if parts and parts[0] == "vertex":
            try:
                coords.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"STL parse error: {raw!r}") from exc
    if not coords or len(coords) % 3:
        raise MeshError("ASCII STL has no complete facets")
    tris = np.array(coords, dtype=np.float64)
    return weld_vertices(tris, np.arange(len(tris)).reshape(-1, 3))


def load_mesh(path, scale: float = 1.0) -> TriangleMesh:
    """Load an OBJ or STL file and scale it to meters.

    ``scale`` multiplies every coordinate (0.001 for millimetre assets).
    """
    path = Path(path)
    if not np.isfinite(scale) or scale <= 0:
        raise MeshError(f"scale must be positive, got {scale}")
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        V, F = _parse_obj(path.read_text(encoding="utf-8", errors="replace"))
    elif suffix == ".stl":
        V, F = _parse_stl(path.read_bytes())
    else:
        raise MeshError(f"unsupported mesh format: {suffix}")
    if len(V) == 0 or len(F) == 0:
        raise MeshError(f"empty mesh: {path}")
    return TriangleMesh(V * scale, F)


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------- primitives


def box_mesh(extents) -> TriangleMesh:
    """Axis-aligned box centred at the origin.

    Each face is split into four triangles around its centre so the
    triangulation is mirror-symmetric about every coordinate plane.
    """
    h = np.asarray(extents, dtype=np.float64) / 2.0
    verts, tris = [], []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1.0, -1.0):
            base = len(verts)
            quad = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
            for su, sv in quad:
                p = np.zeros(3)
                p[axis], p[u], p[v] = sign * h[axis], su * h[u], sv * h[v]
                verts.append(p)
            centre = np.zeros(3)
            centre[axis] = sign * h[axis]
            verts.append(centre)
            c = base + 4
            for k in range(4):
                a, b = base + k, base + (k + 1) % 4
                tris.append([a, b, c] if sign > 0 else [b, a, c])
    V, F = weld_vertices(np.array(verts), np.array(tris))
    return TriangleMesh(V, F)


def cube_mesh_minimal(size: float = 1.0) -> TriangleMesh:
    """Canonical 8-vertex, 12-triangle cube centred at the origin."""
    s = size / 2.0
    V = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)])
    F = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return TriangleMesh(V, F)


def cylinder_mesh(radius: float, height: float, segments: int = 48) -> TriangleMesh:
    """Closed cylinder along z, centred at the origin."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    hz = height / 2.0
    V = np.vstack([
        np.column_stack([ring, np.full(segments, -hz)]),
        np.column_stack([ring, np.full(segments, hz)]),
        [[0.0, 0.0, -hz], [0.0, 0.0, hz]],
    ])
    bottom_c, top_c = 2 * segments, 2 * segments + 1
    F = []
    for i in range(segments):
        j = (i + 1) % segments
        F += [[i, j, segments + j], [i, segments + j, segments + i]]
        F += [[bottom_c, j, i], [top_c, segments + i, segments + j]]
    return TriangleMesh(V, np.array(F))


def icosphere(radius: float, subdivisions: int = 3) -> TriangleMesh:
    """Geodesic sphere; symmetric under reflection through each coordinate plane."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    V = [
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ]
    F = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    V = np.array(V, dtype=np.float64)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    F = np.array(F)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        verts = list(V)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_f = []
        for a, b, c in F:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        V, F = np.array(verts), np.array(new_f)
    return TriangleMesh(V * radius, F)


def uv_sphere(radius: float, n_lat: int = 32, n_lon: int = 64) -> TriangleMesh:
    """Latitude/longitude sphere with vertices exactly at the poles (+-z)."""
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2.0 * np.pi * j / n_lon
            verts.append([radius * np.sin(theta) * np.cos(ph),
                          radius * np.sin(theta) * np.sin(ph),
                          radius * np.cos(theta)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1
    F = []
    for j in range(n_lon):
        F.append([0, 1 + j, 1 + (j + 1) % n_lon])
    for i in range(n_lat - 2):
        r0, r1 = 1 + i * n_lon, 1 + (i + 1) * n_lon
        for j in range(n_lon):
            k = (j + 1) % n_lon
            F += [[r0 + j, r1 + j, r1 + k], [r0 + j, r1 + k, r0 + k]]
    last = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        F.append([south, last + (j + 1) % n_lon, last + j])
    return TriangleMesh(np.array(verts), np.array(F))


# ------------------------------------------------------------------ surface samples


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    points: np.ndarray
    normals: np.ndarray


def _canonical_corners(a, b, c):
    """Reorder triangle corners so the sampling lattice does not depend on
    vertex order: anchor opposite the unique longest edge (or the apex of an
    isosceles triangle), shorter adjacent edge first."""
    P = np.stack([a, b, c], axis=1)  # (T, 3 corners, 3)
    opp = np.stack([
        np.linalg.norm(c - b, axis=1),
        np.linalg.norm(a - c, axis=1),
        np.linalg.norm(b - a, axis=1),
    ], axis=1)
    mx = opp.max(axis=1, keepdims=True)
    mn = opp.min(axis=1, keepdims=True)
    n_max = (opp == mx).sum(axis=1)
    anchor = np.where(n_max == 1, np.argmax(opp, axis=1), np.argmin(opp, axis=1))
    anchor = np.where(mx[:, 0] == mn[:, 0], 0, anchor)
    idx = np.arange(len(P))
    o1, o2 = (anchor + 1) % 3, (anchor + 2) % 3
    A, B, C = P[idx, anchor], P[idx, o1], P[idx, o2]
    swap = np.linalg.norm(B - A, axis=1) > np.linalg.norm(C - A, axis=1)
    B2 = np.where(swap[:, None], C, B)
    C2 = np.where(swap[:, None], B, C)
    return A, B2, C2


def sample_surface_grid(mesh: TriangleMesh, spacing: float) -> SurfaceSamples:
    """Deterministic, near-uniform surface points with outward face normals.

    Per triangle a lattice of cells no larger than ``spacing`` along its two
    shorter edges, plus evenly spaced points on every edge and all vertices.
    The point set mirrors exactly when the mesh does.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    A, B, C = _canonical_corners(*mesh.corners)
    normals = mesh.face_normals
    pts, nrm = [mesh.vertices.copy()], []
    vnorm = np.zeros_like(mesh.vertices)
    np.add.at(vnorm, mesh.triangles.reshape(-1), np.repeat(normals * mesh.areas[:, None], 3, axis=0))
    vnorm /= np.maximum(np.linalg.norm(vnorm, axis=1, keepdims=True), 1e-300)
    nrm.append(vnorm)
    n1 = np.maximum(1, np.ceil(np.linalg.norm(B - A, axis=1) / spacing)).astype(int)
    n2 = np.maximum(1, np.ceil(np.linalg.norm(C - A, axis=1) / spacing)).astype(int)
    for key in np.unique(np.column_stack([n1, n2]), axis=0):
        sel = np.flatnonzero((n1 == key[0]) & (n2 == key[1]))
        ga, gb = np.meshgrid((np.arange(key[0]) + 0.5) / key[0], (np.arange(key[1]) + 0.5) / key[1], indexing="ij")
        keep = ga + gb <= 1.0
        ga, gb = ga[keep], gb[keep]
        if len(ga) == 0:
            continue
        p = A[sel, None, :] + ga[None, :, None] * (B - A)[sel, None, :] + gb[None, :, None] * (C - A)[sel, None, :]
        pts.append(p.reshape(-1, 3))
        nrm.append(np.repeat(normals[sel], len(ga), axis=0))
    E = mesh.edges
    ea, eb = mesh.vertices[E[:, 0]], mesh.vertices[E[:, 1]]
    ne = np.maximum(1, np.ceil(np.linalg.norm(eb - ea, axis=1) / spacing)).astype(int)
    # edge normals: average of incident vertex normals is adequate for contacts
    en = vnorm[E[:, 0]] + vnorm[E[:, 1]]
    en /= np.maximum(np.linalg.norm(en, axis=1, keepdims=True), 1e-300)
    for m in np.unique(ne):
        if m < 2:
            continue
        sel = np.flatnonzero(ne == m)
        s = np.arange(1, m) / m
        p = ea[sel, None, :] + s[None, :, None] * (eb - ea)[sel, None, :]
        pts.append(p.reshape(-1, 3))
        nrm.append(np.repeat(en[sel], m - 1, axis=0))
    P = np.concatenate(pts)
    N = np.concatenate(nrm)
    P.setflags(write=False)
    N.setflags(write=False)
    return SurfaceSamples(P, N)


def sample_surface_random(mesh: TriangleMesh, count: int, rng: np.random.Generator):
    """Area-weighted uniform random surface points; returns (points, normals, tri_index)."""
    prob = mesh.areas / mesh.areas.sum()
    tri = rng.choice(len(prob), size=count, p=prob)
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    a, b, c = (x[tri] for x in mesh.corners)
    pts = (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c
    return pts, mesh.face_normals[tri], tri
