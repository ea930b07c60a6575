from __future__ import annotations

import inspect
import json

import numpy as np
import pytest

from gravgrasp.closure import (
    ClosureConfig,
    ClosureFailure,
    ContactKind,
    ContactPoint,
    FailureReason,
    SettledGrasp,
    extract_contacts,
    simulate_closure,
)
from gravgrasp.geometry import Pose, box_mesh, sample_surface_grid
from gravgrasp.hand import GraspMode, Link, classify_grasp_mode, link_boxes
from gravgrasp.sampling import GraspCandidate

# approach along +x of the object, closing along +y
SIDE = np.column_stack([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
# approach straight down, closing along +y
TOP = np.diag([1.0, -1.0, -1.0])


def _cand(R, t, width=0.065, cid="c"):
    return GraspCandidate(cid, Pose(R, t), width, "AntipodalSeed", 0)


@pytest.fixture(scope="module")
def cyl_pinch(params, cylinder):
    return simulate_closure(params, cylinder, _cand(SIDE, [0.0, 0.0, 0.0]))


@pytest.fixture(scope="module")
def cyl_envelope(params, cylinder):
    return simulate_closure(params, cylinder, _cand(SIDE, [0.025, 0.0, 0.0]))


def _regions(settled):
    return {c.region for c in settled.contacts}


def test_fingertip_depth_gives_precision(cyl_pinch):
    assert cyl_pinch.mode is GraspMode.Precision
    assert cyl_pinch.width == pytest.approx(0.065, abs=0.002)
    assert {c.link for c in cyl_pinch.contacts} <= {Link.FingertipL, Link.FingertipR}


def test_deeper_candidate_gives_power(cyl_envelope):
    assert cyl_envelope.mode is GraspMode.Power
    assert len(_regions(cyl_envelope)) >= 3
    links = {c.link for c in cyl_envelope.contacts}
    assert links & {Link.ProximalL, Link.ProximalR, Link.Palm}


def test_mode_matches_rule(cyl_pinch, cyl_envelope):
    for s in (cyl_pinch, cyl_envelope):
        assert s.mode is classify_grasp_mode(s.contacts)
        assert 0.0 <= s.width <= 0.085


def test_shallow_insertion_still_grasps(params, cylinder):
    s = simulate_closure(params, cylinder, _cand(SIDE, [0.01, 0.0, 0.0]))
    assert s.mode in (GraspMode.Precision, GraspMode.Power)


def test_far_candidate_has_no_contact(params, cylinder):
    with pytest.raises(ClosureFailure) as exc:
        simulate_closure(params, cylinder, _cand(SIDE, [-0.5, 0.0, 0.0]))
    assert exc.value.reason is FailureReason.NoContact


def test_palm_inside_object_is_initial_penetration(params, cylinder):
    with pytest.raises(ClosureFailure) as exc:
        simulate_closure(params, cylinder, _cand(SIDE, [0.1, 0.0, 0.0]))
    assert exc.value.reason is FailureReason.InitialPenetration


def test_contacts_are_unit_and_on_the_surface(cyl_envelope, cylinder):
    from gravgrasp.geometry import signed_distance

    d = signed_distance(cylinder, np.array([c.position for c in cyl_envelope.contacts]))
    assert np.all(np.abs(d) < 1e-6)
    for c in cyl_envelope.contacts:
        assert abs(np.linalg.norm(c.normal) - 1.0) < 1e-9


@pytest.mark.parametrize("which", ["cyl_pinch", "cyl_envelope"])
def test_settled_penetration_within_tolerance(which, request, params, cylinder):
    settled = request.getfixturevalue(which)
    cfg = ClosureConfig()
    pts = settled.hand_pose.inverse().transform_points(sample_surface_grid(cylinder, cfg.sample_spacing).points)
    for box in link_boxes(params, settled.finger_state):
        s, _ = box.sdf(pts)
        assert s.min() >= -1e-4


def test_contact_normals_point_into_object(cyl_pinch):
    for c in cyl_pinch.contacts:
        radial = np.array([c.position[0], c.position[1], 0.0])
        assert c.normal @ radial < 0


def test_closure_is_deterministic(params, cylinder, cyl_envelope):
    again = simulate_closure(params, cylinder, _cand(SIDE, [0.025, 0.0, 0.0]))
    assert json.dumps(again.to_dict()) == json.dumps(cyl_envelope.to_dict())


def test_no_gravity_parameter():
    names = set(inspect.signature(simulate_closure).parameters) | {f for f in ClosureConfig.__dataclass_fields__}
    assert not any("grav" in n for n in names)


def test_centered_sphere_pinch_keeps_symmetry(params, sphere):
    s = simulate_closure(params, sphere, _cand(np.eye(3), [0.0, 0.0, 0.0], 0.06))
    centre_in_hand = s.hand_pose.inverse().translation
    assert abs(centre_in_hand[0]) < 1e-6 and abs(centre_in_hand[1]) < 1e-6


def test_cube_pinch_extracts_two_squeeze_regions(params, small_block):
    s = simulate_closure(params, small_block, _cand(TOP, [0.0, 0.0, 0.05], 0.05))
    regions = extract_contacts(s)
    assert len(regions) == 2
    assert all(r.kind is ContactKind.Squeeze for r in regions)


def test_envelope_extracts_constraint_region(cyl_envelope):
    regions = extract_contacts(cyl_envelope)
    assert len(regions) >= 3
    assert any(r.kind is ContactKind.Constraint for r in regions)


def test_duplicate_contacts_merge():
    a = ContactPoint([0.0, 0.0, 0.0], [0, 1, 0], Link.FingertipL, ContactKind.Squeeze)
    b = ContactPoint([0.001, 0.0, 0.0], [0, 1, 0], Link.FingertipL, ContactKind.Squeeze)
    c = ContactPoint([0.0, 0.06, 0.0], [0, -1, 0], Link.FingertipR, ContactKind.Squeeze)
    assert len(extract_contacts([a, b, c])) == 2


def test_contact_point_normalises_and_rejects_zero():
    c = ContactPoint([0, 0, 0], [0, 3, 4], Link.Palm, ContactKind.Constraint)
    assert np.allclose(c.normal, [0, 0.6, 0.8])
    with pytest.raises(ValueError):
        ContactPoint([0, 0, 0], [0, 0, 0], Link.Palm, ContactKind.Constraint)


def test_settled_grasp_round_trip_and_validation(cyl_envelope):
    back = SettledGrasp.from_dict(json.loads(json.dumps(cyl_envelope.to_dict())))
    assert back.to_dict() == cyl_envelope.to_dict()
    with pytest.raises(ValueError):
        SettledGrasp(Pose.identity(), (), GraspMode.Precision, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ClosureConfig(closure_step=0.0)
    with pytest.raises(ValueError):
        ClosureConfig(settle_tol=1e-3)


def test_thin_box_pinch_width(params):
    plate = box_mesh([0.06, 0.02, 0.06])
    s = simulate_closure(params, plate, _cand(TOP, [0.0, 0.0, 0.02], 0.02))
    assert s.width == pytest.approx(0.02, abs=0.002)


def test_glancing_contact_on_sphere_is_ejected(params, sphere):
    # a perturbed candidate whose fingertip edges squeeze the sphere out of the hand
    pose = Pose.from_dict({
        "rotation": [[-0.15026921358282233, -0.08618988468287624, -0.9848809406357464],
                     [-0.7460984908315594, 0.6634956661202971, 0.05577224236529087],
                     [0.6486572326183296, 0.7431990344570798, -0.16400911485034797]],
        "translation": [-0.005928185846136929, 0.011552253308071034, -0.032554654029928916],
    })
    with pytest.raises(ClosureFailure) as exc:
        simulate_closure(params, sphere, GraspCandidate("e", pose, 0.06, "Perturbed", 0))
    assert exc.value.reason is FailureReason.Ejected
