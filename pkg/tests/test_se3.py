import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinemorph.se3 import (
    NearPiRotationWarning,
    RigidTransform,
    compose,
    fix_hemisphere,
    geodesic_rotation_distance,
    invert,
    matrix_from_quat,
    quat_from_matrix,
    random_rotation,
    random_transform,
    rot_exp,
    rot_log,
    rot_x,
    rot_z,
    rotation_angle,
)

vectors = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)
seeds = st.integers(0, 2**32 - 1)


def test_rot_exp_of_zero_is_identity():
    np.testing.assert_array_equal(rot_exp(np.zeros(3)), np.eye(3))


def test_rot_exp_quarter_turn_about_z_matches_closed_form():
    np.testing.assert_allclose(rot_exp([0.0, 0.0, np.pi / 2]), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_rot_exp_small_angle_uses_series_without_loss():
    v = np.array([1e-10, -2e-10, 3e-10])
    r = rot_exp(v)
    np.testing.assert_allclose(r, np.eye(3) + np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]), atol=1e-19)


def test_rot_log_of_identity_and_quarter_turn():
    np.testing.assert_array_equal(rot_log(np.eye(3)), np.zeros(3))
    np.testing.assert_allclose(rot_log(rot_z(np.pi / 2)), [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_rot_log_near_pi_warns_and_keeps_norm_pi():
    r = rot_x(np.deg2rad(179.9999999))
    with pytest.warns(NearPiRotationWarning):
        v = rot_log(r)
    assert abs(np.linalg.norm(v) - np.pi) < 1e-6
    np.testing.assert_allclose(rot_exp(v), r, atol=1e-6)


def test_rot_log_near_pi_is_deterministic():
    r = rot_x(np.deg2rad(179.9999999))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearPiRotationWarning)
        np.testing.assert_array_equal(rot_log(r), rot_log(r.copy()))


@given(seeds)
def test_rot_exp_inverts_rot_log(seed):
    r = random_rotation(np.random.default_rng(seed), np.pi - 0.1)
    v = rot_log(r)
    assert np.linalg.norm(v) <= np.pi
    assert np.linalg.norm(rot_exp(v) - r) < 1e-9


@given(vectors)
def test_rot_log_inverts_rot_exp_below_pi(v):
    if np.linalg.norm(v) > np.pi - 0.1:
        v = v * (np.pi - 0.1) / np.linalg.norm(v)
    np.testing.assert_allclose(rot_log(rot_exp(v)), v, atol=1e-9)


def test_geodesic_distance_closed_form_and_zero():
    r = rot_z(0.7)
    assert geodesic_rotation_distance(r, r) == pytest.approx(0.0, abs=1e-12)
    assert geodesic_rotation_distance(np.eye(3), rot_z(np.pi / 2)) == pytest.approx(np.sqrt(2) * np.pi / 2, abs=1e-12)


@given(seeds)
def test_geodesic_distance_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_rotation(rng), random_rotation(rng)
    assert abs(geodesic_rotation_distance(a, b) - geodesic_rotation_distance(b, a)) < 1e-12


def test_compose_worked_example():
    a = RigidTransform(rot_z(np.pi / 2), np.array([1.0, 0.0, 0.0]))
    b = RigidTransform(np.eye(3), np.array([0.0, 1.0, 0.0]))
    c = compose(a, b)
    np.testing.assert_allclose(c.rotation, rot_z(np.pi / 2), atol=1e-15)
    np.testing.assert_allclose(c.translation, [0.0, 0.0, 0.0], atol=1e-15)


def test_compose_with_identity_and_inverse(rng):
    t = random_transform(rng)
    assert compose(RigidTransform.identity(), t).allclose(t, 1e-12)
    assert compose(t, invert(t)).allclose(RigidTransform.identity(), 1e-9)


def test_invert_pure_translation():
    t = invert(RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0])))
    np.testing.assert_array_equal(t.translation, [-1.0, -2.0, -3.0])
    assert invert(RigidTransform.identity()).allclose(RigidTransform.identity(), 0.0)


def test_double_inverse_on_100_random_transforms(rng):
    for _ in range(100):
        t = random_transform(rng)
        assert invert(invert(t)).allclose(t, 1e-9)


def test_composition_stays_a_rotation_after_long_chains(rng):
    t = RigidTransform.identity()
    for _ in range(500):
        t = compose(t, random_transform(rng, scale=1.0))
    assert t.is_valid(1e-9)


def test_invalid_rotation_is_rejected():
    with pytest.raises(ValueError):
        RigidTransform(2.0 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@given(seeds)
def test_quaternion_round_trip_and_hemisphere(seed):
    r = random_rotation(np.random.default_rng(seed))
    q = quat_from_matrix(r)
    assert q[0] >= 0.0
    assert abs(np.linalg.norm(q) - 1.0) < 1e-12
    np.testing.assert_allclose(matrix_from_quat(q), r, atol=1e-12)


def test_fix_hemisphere_breaks_ties_on_first_nonzero_component():
    np.testing.assert_array_equal(fix_hemisphere([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(fix_hemisphere([0.0, 0.0, -0.6, 0.8]), [0.0, 0.0, 0.6, -0.8])
    np.testing.assert_array_equal(fix_hemisphere([-0.5, 0.5, 0.5, 0.5]), [0.5, -0.5, -0.5, -0.5])


def test_rotation_angle_matches_construction():
    assert rotation_angle(rot_x(1.2)) == pytest.approx(1.2, abs=1e-12)
