from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gravgrasp.geometry import (
    CameraModel,
    GridSpec,
    MeshError,
    Pose,
    TriangleMesh,
    VoxelVolume,
    axis_angle_to_matrix,
    box_mesh,
    cube_mesh_minimal,
    cylinder_mesh,
    integrate_tsdf,
    is_rotation,
    load_mesh,
    look_at,
    mesh_intersects,
    query_distance,
    render_depth,
    rotvec_to_matrix,
    save_obj,
    signed_distance,
    uv_sphere,
)
from gravgrasp.geometry.mesh import sample_surface_grid

unit = st.floats(-1, 1, allow_nan=False)


def random_pose(rng, spread=1.0):
    return Pose(rotvec_to_matrix(rng.normal(size=3)), rng.uniform(-spread, spread, 3))


# ------------------------------------------------------------------- poses


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.eye(3), [0.0, np.nan, 0.0])


@given(st.tuples(unit, unit, unit), st.floats(-6, 6), st.tuples(unit, unit, unit))
def test_pose_inverse_composes_to_identity(axis, angle, t):
    if np.linalg.norm(axis) < 1e-3:
        axis = (1.0, 0.0, 0.0)
    p = Pose(axis_angle_to_matrix(axis, angle), t)
    assert (p * p.inverse()).almost_equal(Pose.identity(), atol=1e-12)
    assert is_rotation(p.rotation, 1e-9)


def test_pose_matches_homogeneous_matrix(rng):
    a, b = random_pose(rng), random_pose(rng)
    assert np.allclose((a * b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)
    pts = rng.normal(size=(5, 3))
    hom = np.c_[pts, np.ones(5)] @ a.as_matrix().T
    assert np.allclose(a.transform_points(pts), hom[:, :3], atol=1e-12)


def test_pose_dict_round_trip(rng):
    p = random_pose(rng)
    assert Pose.from_dict(p.to_dict()).almost_equal(p, atol=0)


def test_look_at_points_optical_axis_at_target():
    cam = look_at((0.5, 0.0, 0.5), (0.0, 0.0, 0.0))
    z = cam.rotation[:, 2]
    assert np.allclose(z, np.array([-1.0, 0.0, -1.0]) / math.sqrt(2))
    assert is_rotation(cam.rotation)


# ------------------------------------------------------------------ meshes


def test_minimal_cube_counts_and_volume():
    m = cube_mesh_minimal(1.0)
    assert (len(m.vertices), len(m.triangles)) == (8, 12)
    assert m.watertight
    assert m.volume == pytest.approx(1.0)


def test_load_unit_cube_obj(tmp_path):
    path = tmp_path / "cube.obj"
    save_obj(cube_mesh_minimal(1.0), path)
    m = load_mesh(path)
    assert (len(m.vertices), len(m.triangles)) == (8, 12)


def test_load_binary_stl_with_mm_scale(tmp_path):
    m = cube_mesh_minimal(10.0)
    tris = m.vertices[m.triangles]
    buf = bytearray(80) + struct.pack("<I", len(tris))
    for t, n in zip(tris, m.face_normals):
        buf += struct.pack("<12fH", *n, *t.ravel(), 0)
    path = tmp_path / "cube.stl"
    path.write_bytes(bytes(buf))
    loaded = load_mesh(path, scale=0.001)
    assert np.allclose(loaded.extents, [0.01, 0.01, 0.01])
    assert len(loaded.vertices) == 8 and loaded.watertight


@pytest.mark.parametrize("scale", [0.0, -1.0, float("nan")])
def test_load_rejects_degenerate_scale(tmp_path, scale):
    path = tmp_path / "cube.obj"
    save_obj(cube_mesh_minimal(1.0), path)
    with pytest.raises(MeshError):
        load_mesh(path, scale)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "missing.obj")
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv nan 0 0\nf 1 2 3\n")
    with pytest.raises(MeshError):
        load_mesh(bad)
    empty = tmp_path / "empty.obj"
    empty.write_text("# nothing\n")
    with pytest.raises(MeshError):
        load_mesh(empty)


def test_cylinder_asset_bounding_box(tmp_path):
    path = tmp_path / "cylinder.obj"
    save_obj(cylinder_mesh(0.0325, 0.2, segments=64), path)
    m = load_mesh(path)
    assert np.allclose(m.extents, [0.065, 0.065, 0.2], atol=1e-9)


def test_degenerate_triangles_dropped():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
    m = TriangleMesh(V, np.array([[0, 1, 2], [0, 1, 3]]))
    assert len(m.triangles) == 1
    with pytest.raises(MeshError):
        TriangleMesh(V, np.array([[0, 1, 7]]))


# -------------------------------------------------------- signed distance


def _point_triangle_distance(p, a, b, c):
    """Plane projection when it lands inside, else the nearest edge."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - np.dot(p - a, n) * n
    inside = all(np.dot(np.cross(v1 - v0, q - v0), n) >= 0 for v0, v1 in ((a, b), (b, c), (c, a)))
    if inside:
        return abs(np.dot(p - a, n))
    best = np.inf
    for v0, v1 in ((a, b), (b, c), (c, a)):
        e = v1 - v0
        s = np.clip(np.dot(p - v0, e) / np.dot(e, e), 0.0, 1.0)
        best = min(best, np.linalg.norm(p - (v0 + s * e)))
    return best


def _ray_parity_inside(mesh, p, direction):
    hits = 0
    for a, b, c in mesh.vertices[mesh.triangles]:
        e1, e2 = b - a, c - a
        h = np.cross(direction, e2)
        det = np.dot(e1, h)
        if abs(det) < 1e-14:
            continue
        s = p - a
        u = np.dot(s, h) / det
        q = np.cross(s, e1)
        v = np.dot(direction, q) / det
        t = np.dot(e2, q) / det
        if u >= 0 and v >= 0 and u + v <= 1 and t > 0:
            hits += 1
    return hits % 2 == 1


def test_signed_distance_unit_cube_examples():
    cube = cube_mesh_minimal(1.0)
    assert signed_distance(cube, [0, 0, 0]) == pytest.approx(-0.5, abs=1e-12)
    assert signed_distance(cube, [1, 0, 0]) == pytest.approx(0.5, abs=1e-12)


def test_signed_distance_matches_exhaustive_scan(rng):
    mesh = cylinder_mesh(0.03, 0.1, segments=12)
    pts = rng.uniform(-0.08, 0.08, (40, 3))
    got = signed_distance(mesh, pts)
    direction = np.array([0.5773, 0.5774, 0.5775])
    for p, g in zip(pts, got):
        d = min(_point_triangle_distance(p, *tri) for tri in mesh.vertices[mesh.triangles])
        sign = -1.0 if _ray_parity_inside(mesh, p, direction) else 1.0
        assert g == pytest.approx(sign * d, abs=1e-6)


def test_signed_distance_requires_watertight_but_query_flags():
    open_mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    with pytest.raises(MeshError):
        signed_distance(open_mesh, [0, 0, 1])
    res = query_distance(open_mesh, [[0.2, 0.2, 0.5]])
    assert not res.signed
    assert res.distance[0] == pytest.approx(0.5)


def test_sign_flips_when_crossing_surface(rng):
    mesh = box_mesh([0.1, 0.06, 0.04])
    for _ in range(20):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        ts = np.linspace(0.0, 0.2, 81)
        s = signed_distance(mesh, ts[:, None] * d)
        flips = np.count_nonzero(np.diff(np.sign(s)) != 0)
        assert s[0] < 0 < s[-1] and flips == 1


# -------------------------------------------------------------- collisions


def test_mesh_intersects_examples():
    cube = cube_mesh_minimal(1.0)
    assert mesh_intersects(cube, Pose.identity(), cube, Pose.identity(), 0.0)
    assert not mesh_intersects(cube, Pose.identity(), cube, Pose.from_translation([3, 0, 0]), 0.0)
    gap = Pose.from_translation([1.002, 0, 0])
    assert mesh_intersects(cube, Pose.identity(), cube, gap, 0.005)
    assert not mesh_intersects(cube, Pose.identity(), cube, gap, 0.001)


def test_mesh_intersects_detects_containment():
    big, small = cube_mesh_minimal(1.0), cube_mesh_minimal(0.1)
    assert mesh_intersects(big, Pose.identity(), small, Pose.identity(), 0.0)


@given(st.floats(0.0, 0.3), st.floats(0.0, 0.02), st.floats(0.0, 0.02), st.integers(0, 1000))
def test_mesh_intersects_symmetric_and_monotone(offset, c1, c2, seed):
    rng = np.random.default_rng(seed)
    a = box_mesh([0.1, 0.1, 0.1])
    b = cylinder_mesh(0.03, 0.1, segments=10)
    pa = Pose(rotvec_to_matrix(rng.normal(size=3)), np.zeros(3))
    pb = Pose(rotvec_to_matrix(rng.normal(size=3)), [0.08 + offset, 0.0, 0.0])
    lo, hi = sorted((c1, c2))
    r_lo = mesh_intersects(a, pa, b, pb, lo)
    assert r_lo == mesh_intersects(b, pb, a, pa, lo)
    if r_lo:
        assert mesh_intersects(a, pa, b, pb, hi)


# --------------------------------------------------------------- rendering


def _axis_camera(n=3):
    return CameraModel(Pose.identity(), 100.0, 100.0, (n - 1) / 2, (n - 1) / 2, n, n)


def test_render_empty_scene_is_invalid():
    depth = render_depth([], CameraModel.default())
    assert depth.shape == (120, 160) and np.all(np.isnan(depth))


def test_render_sphere_centre_pixel_depth():
    sphere = uv_sphere(0.5, 32, 64)
    depth = render_depth([(sphere, Pose.from_translation([0, 0, 1.0]))], _axis_camera())
    assert depth[1, 1] == pytest.approx(0.5, abs=1e-4)


def test_render_is_deterministic_and_noise_is_seeded():
    sphere = uv_sphere(0.5, 16, 32)
    objs = [(sphere, Pose.from_translation([0, 0, 1.0]))]
    cam = _axis_camera(9)
    assert np.array_equal(render_depth(objs, cam), render_depth(objs, cam), equal_nan=True)
    n1 = render_depth(objs, cam, noise_sigma=0.001, rng=np.random.default_rng(1))
    n2 = render_depth(objs, cam, noise_sigma=0.001, rng=np.random.default_rng(1))
    assert np.array_equal(n1, n2, equal_nan=True)


def test_reference_layout_shows_both_objects():
    cyl = cylinder_mesh(0.0325, 0.2)
    cube = box_mesh([0.1, 0.08, 0.1])
    objs = [(cyl, Pose.from_translation([-0.0325, 0, 0.1])), (cube, Pose.from_translation([0.06, 0, 0.05]))]
    cam = CameraModel.default()
    both = render_depth(objs, cam)
    only = [render_depth([o], cam) for o in objs]
    for single in only:
        hit = ~np.isnan(single)
        assert np.any(hit & np.isclose(both, single, equal_nan=False))


# -------------------------------------------------------------------- TSDF


def test_volume_validates_channel_size():
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros(3), 0.01, (2, 2, 2), {"a": np.zeros(7)})
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros(3), 0.0, (2, 2, 2))


def test_tsdf_flat_wall_zero_crossing():
    wall = box_mesh([2.0, 2.0, 0.01])
    cam = _axis_camera(21)
    depth = render_depth([(wall, Pose.from_translation([0, 0, 1.005]))], cam)
    assert np.allclose(depth, 1.0)
    grid = GridSpec(origin=(-0.05, -0.05, 0.8), voxel_size=0.01, dims=(10, 10, 40))
    vol = integrate_tsdf(depth, cam, grid)
    column = vol["tsdf"][5, 5]
    z = grid.origin[2] + (np.arange(40) + 0.5) * grid.voxel_size
    k = np.flatnonzero(np.diff(np.sign(column)) != 0)[0]
    z0 = z[k] + column[k] / (column[k] - column[k + 1]) * grid.voxel_size
    assert abs(z0 - 1.0) < grid.voxel_size
    assert np.all(np.abs(vol["tsdf"]) <= 1.0)


def test_tsdf_surface_voxel_near_zero():
    wall = box_mesh([2.0, 2.0, 0.01])
    cam = _axis_camera(21)
    depth = render_depth([(wall, Pose.from_translation([0, 0, 1.005]))], cam)
    grid = GridSpec(origin=(-0.005, -0.005, 0.995), voxel_size=0.01, dims=(1, 1, 1))
    vol = integrate_tsdf(depth, cam, grid)
    assert abs(vol["tsdf"][0, 0, 0]) <= grid.voxel_size / (4 * grid.voxel_size)


def test_tsdf_empty_depth_all_unobserved():
    cam = CameraModel.default()
    vol = integrate_tsdf(np.full((cam.height, cam.width), np.nan), cam, GridSpec())
    assert not vol["observed"].any()


def test_tsdf_truncation_must_exceed_voxel():
    cam = CameraModel.default()
    with pytest.raises(ValueError):
        integrate_tsdf(np.ones((cam.height, cam.width)), cam, GridSpec(), truncation=0.001)


def test_tsdf_grid_outside_frustum_warns(caplog):
    cam = CameraModel.default()
    grid = GridSpec(origin=(5.0, 5.0, 5.0), voxel_size=0.01, dims=(4, 4, 4))
    vol = integrate_tsdf(np.ones((cam.height, cam.width)), cam, grid)
    assert not vol["observed"].any()
    assert "frustum" in caplog.text


@given(st.integers(0, 10_000))
def test_tsdf_values_bounded(seed):
    rng = np.random.default_rng(seed)
    cam = CameraModel(Pose.identity(), 20.0, 20.0, 7.5, 7.5, 16, 16)
    depth = rng.uniform(0.2, 1.0, (16, 16))
    depth[rng.random((16, 16)) < 0.2] = np.nan
    vol = integrate_tsdf(depth, cam, GridSpec(origin=(-0.3, -0.3, 0.1), voxel_size=0.05, dims=(12, 12, 20)))
    assert np.all(np.abs(vol["tsdf"]) <= 1.0)


# ---------------------------------------------------------------- sampling


def test_surface_grid_samples_lie_on_surface():
    mesh = cylinder_mesh(0.0325, 0.2)
    s = sample_surface_grid(mesh, 0.005)
    d = signed_distance(mesh, s.points[::37])
    assert np.max(np.abs(d)) < 1e-9
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0)
