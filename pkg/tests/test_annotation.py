from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from gravgrasp.annotation import (
    MODE_CODES,
    ROT_CHANNELS,
    SENTINEL_F_G,
    SENTINEL_WIDTH,
    BasisOrder,
    RotationEncoding,
    annotate_scene,
    empty_annotation,
    encode_rotation,
    reconstruct_rotation,
)
from gravgrasp.geometry import GridSpec, Pose, rot_z
from gravgrasp.hand import GraspMode
from gravgrasp.scene import SceneGrasp

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


def _qr_frame(first, second):
    """Orthonormalise two vectors with a QR factorisation, positive diagonal."""
    Q, Rm = np.linalg.qr(np.column_stack([first, second]))
    Q = Q * np.sign(np.diag(Rm))
    return Q[:, 0], Q[:, 1]


def _quat_matrix(q):
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _orthonormal(R, tol=1e-9):
    return np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol


# ------------------------------------------------------------------ codec


@pytest.mark.parametrize(
    "ex,ez,expected",
    [
        ((1, 0, 0), (0, 0, 1), np.eye(3)),
        ((2, 0, 0), (1, 0, 1), np.eye(3)),
        ((0, 1, 0), (0, 1, 1), np.column_stack([(0, 1, 0), (-1, 0, 0), (0, 0, 1)])),
    ],
)
def test_hand_computed_cases(ex, ez, expected):
    R = reconstruct_rotation(RotationEncoding(ex, ez, BasisOrder.ExEz))
    assert np.array_equal(R, expected.astype(float))


def test_encode_examples():
    enc = encode_rotation(np.eye(3))
    assert np.array_equal(enc.e_x_raw, [1, 0, 0]) and np.array_equal(enc.e_z_raw, [0, 0, 1])
    enc = encode_rotation(rot_z(np.pi / 2))
    assert np.allclose(enc.e_x_raw, [0, 1, 0], atol=1e-15) and np.allclose(enc.e_z_raw, [0, 0, 1])


@pytest.mark.parametrize("order", list(BasisOrder))
def test_round_trip(order):
    for R in Rotation.random(500, random_state=1).as_matrix():
        assert np.allclose(reconstruct_rotation(encode_rotation(R, order), order), R, atol=1e-9)


@given(vec, vec)
def test_exez_matches_qr_oracle(a, b):
    try:
        enc = RotationEncoding(a, b, BasisOrder.ExEz)
    except ValueError:
        return
    R = reconstruct_rotation(enc)
    ex, ez = _qr_frame(a, b)
    assert np.allclose(R, np.column_stack([ex, np.cross(ez, ex), ez]), atol=1e-9)
    assert _orthonormal(R)
    assert np.allclose(R[:, 0], a / np.linalg.norm(a), atol=1e-12)


@given(vec, vec)
def test_eyez_matches_qr_oracle(a, b):
    try:
        enc = RotationEncoding(a, b, BasisOrder.EyEz)
    except ValueError:
        return
    R = reconstruct_rotation(enc)
    ey, ez = _qr_frame(a, b)
    assert np.allclose(R, np.column_stack([np.cross(ey, ez), ey, ez]), atol=1e-9)
    assert _orthonormal(R)
    assert np.allclose(R[:, 1], a / np.linalg.norm(a), atol=1e-12)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3))
def test_quaternion_matches_closed_form(q):
    R = reconstruct_rotation(np.array(q), BasisOrder.Quaternion)
    assert np.allclose(R, _quat_matrix(np.array(q)), atol=1e-9)
    assert _orthonormal(R)


@pytest.mark.parametrize(
    "a,b",
    [((0, 0, 0), (0, 0, 1)), ((1e-7, 0, 0), (0, 0, 1)), ((1, 0, 0), (2, 0, 0)), ((1, 0, 0), (np.nan, 0, 1))],
)
def test_degenerate_encodings_rejected(a, b):
    with pytest.raises(ValueError):
        RotationEncoding(a, b)
    with pytest.raises(ValueError):
        reconstruct_rotation(np.r_[a, b])


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        encode_rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        reconstruct_rotation(np.zeros(4), BasisOrder.Quaternion)
    with pytest.raises(ValueError):
        reconstruct_rotation(np.ones(5))


# ------------------------------------------------------------- labelling

GRID = GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.01, dims=(10, 10, 10))


def _grasp(t, f_g, mode=GraspMode.Precision, valid=True, R=None, width=0.05, cid="g"):
    return SceneGrasp(0, Pose(np.eye(3) if R is None else R, t), f_g, width, mode, valid, cid)


def test_empty_list_gives_all_invalid():
    ann = annotate_scene([], GRID)
    assert not ann.validness.any()
    assert np.all(ann.f_g == SENTINEL_F_G) and np.all(ann.width == SENTINEL_WIDTH)
    assert np.all(ann.rot() == 0)


def test_single_grasp_binned_to_expected_voxel():
    R = rot_z(0.3)
    ann = annotate_scene([_grasp([0.035, 0.051, 0.0999], 12.5, R=R, width=0.04)], GRID)
    assert ann.valid_indices().tolist() == [[3, 5, 9]]
    assert ann.f_g[3, 5, 9] == np.float32(12.5)
    assert ann.width[3, 5, 9] == np.float32(0.04)
    assert ann.mode[3, 5, 9] == MODE_CODES[GraspMode.Precision]
    assert np.allclose(ann.rotation_at((3, 5, 9)), R, atol=1e-6)


def test_max_f_g_wins_and_invalid_ignored():
    grasps = [
        _grasp([0.011, 0.011, 0.011], 5.0, cid="a"),
        _grasp([0.019, 0.012, 0.018], 9.0, GraspMode.Power, cid="b"),
        _grasp([0.015, 0.015, 0.015], 50.0, valid=False, cid="c"),
    ]
    ann = annotate_scene(grasps, GRID)
    assert ann.valid_indices().tolist() == [[1, 1, 1]]
    assert ann.f_g[1, 1, 1] == 9.0 and ann.mode[1, 1, 1] == MODE_CODES[GraspMode.Power]


def test_outside_grasps_counted():
    ann = annotate_scene([_grasp([0.5, 0.0, 0.0], 1.0), _grasp([-0.001, 0.0, 0.0], 1.0)], GRID)
    assert ann.skipped == 2 and not ann.validness.any()


def test_rotation_at_invalid_voxel_raises():
    with pytest.raises(ValueError):
        empty_annotation(GRID).rotation_at((0, 0, 0))


@given(st.lists(st.tuples(st.floats(0, 0.0999), st.floats(0, 0.0999), st.floats(0, 0.0999),
                          st.floats(0, 300), st.booleans()), max_size=40))
def test_annotation_invariants(rows):
    grasps = [_grasp([x, y, z], f, valid=v, cid=str(i)) for i, (x, y, z, f, v) in enumerate(rows)]
    ann = annotate_scene(grasps, GRID)
    valid = ann.validness == 1
    assert set(np.unique(ann.validness)) <= {0, 1}
    assert valid.sum() <= len(grasps)
    best = {}
    for g in grasps:
        if g.valid:
            idx = GRID.index_of(g.pose.translation)
            best[idx] = max(best.get(idx, -np.inf), g.f_g)
    assert set(map(tuple, ann.valid_indices().tolist())) == set(best)
    for idx, f in best.items():
        assert ann.f_g[idx] == np.float32(f)
    # invalid voxels carry only sentinels, valid ones only real values
    assert np.all(ann.f_g[~valid] == SENTINEL_F_G) and np.all(ann.f_g[valid] >= 0)
    assert np.all(ann.width[~valid] == SENTINEL_WIDTH) and np.all(ann.width[valid] >= 0)
    assert np.all(ann.rot()[~valid] == 0) and np.all(ann.mode[~valid] == 0)


def test_binning_is_order_independent():
    rng = np.random.default_rng(3)
    grasps = [_grasp(rng.uniform(0, 0.03, 3), float(rng.integers(0, 5)), cid=str(i)) for i in range(60)]
    a = annotate_scene(grasps, GRID)
    for perm in (grasps[::-1], list(rng.permutation(grasps))):
        b = annotate_scene(perm, GRID)
        assert np.array_equal(a.f_g, b.f_g) and np.array_equal(a.validness, b.validness)


def test_channel_names():
    ann = empty_annotation(GRID)
    assert set(ann.volume.channels) == {"validness", "f_g", "width", "mode", *ROT_CHANNELS}
