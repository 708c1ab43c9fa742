"""Rotation utilities checked against scipy.spatial.transform as an oracle."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from proxfly import rotations as rot


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def as_scipy(q):
    # scipy uses scalar-last
    return Rotation.from_quat(np.roll(np.atleast_2d(q), -1, axis=-1))


def test_quat_to_rotmat_against_scipy():
    rng = np.random.default_rng(1)
    q = random_quats(rng, 200)
    np.testing.assert_allclose(rot.quat_to_rotmat(q), as_scipy(q).as_matrix(), atol=1e-12)


def test_quat_multiply_matches_matrix_product():
    rng = np.random.default_rng(2)
    a = random_quats(rng, 100)
    b = random_quats(rng, 100)
    ab = rot.quat_multiply(a, b)
    np.testing.assert_allclose(
        rot.quat_to_rotmat(ab),
        rot.quat_to_rotmat(a) @ rot.quat_to_rotmat(b),
        atol=1e-12,
    )


def test_quat_rotate_matches_matrix_action():
    rng = np.random.default_rng(3)
    q = random_quats(rng, 100)
    v = rng.normal(size=(100, 3))
    got = rot.quat_rotate(q, v)
    expect = np.einsum("nij,nj->ni", rot.quat_to_rotmat(q), v)
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_exp_log_round_trip():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(500, 3))
    v *= rng.uniform(0.0, np.pi - 1e-3, (500, 1)) / np.linalg.norm(v, axis=-1, keepdims=True)
    back = rot.rotation_vector_from_quat(rot.quat_from_rotation_vector(v))
    np.testing.assert_allclose(back, v, atol=1e-9)


def test_exp_map_against_scipy():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(200, 3))
    got = rot.quat_from_rotation_vector(v)
    expect = np.roll(Rotation.from_rotvec(v).as_quat(), 1, axis=-1)
    sign = np.sign(np.sum(got * expect, axis=-1, keepdims=True))
    np.testing.assert_allclose(got, sign * expect, atol=1e-12)


def test_log_map_small_angle_series():
    v = np.array([1e-10, -2e-10, 3e-10])
    back = rot.rotation_vector_from_quat(rot.quat_from_rotation_vector(v))
    np.testing.assert_allclose(back, v, rtol=1e-6)
    np.testing.assert_allclose(
        rot.rotation_vector_from_quat(np.array([1.0, 0.0, 0.0, 0.0])), np.zeros(3)
    )


def test_log_map_picks_short_rotation():
    v = np.array([0.3, 0.0, 0.0])
    q = rot.quat_from_rotation_vector(v)
    np.testing.assert_allclose(rot.rotation_vector_from_quat(-q), v, atol=1e-12)


def test_body_z_world_is_third_column():
    rng = np.random.default_rng(6)
    q = random_quats(rng, 100)
    np.testing.assert_allclose(
        rot.body_z_world(q), rot.quat_to_rotmat(q)[..., :, 2], atol=1e-12
    )


def test_quat_from_yaw():
    yaw = np.array([0.0, np.pi / 2, -np.pi / 3, 2.0])
    r = rot.quat_to_rotmat(rot.quat_from_yaw(yaw))
    expect = Rotation.from_euler("z", yaw).as_matrix()
    np.testing.assert_allclose(r, expect, atol=1e-12)


def test_quat_integrate_constant_rate():
    q = np.array([1.0, 0.0, 0.0, 0.0])
    omega = np.array([0.0, 0.0, 1.5])
    for _ in range(1000):
        q = rot.quat_integrate(q, omega, 0.002)
    expect = rot.quat_from_yaw(3.0)
    assert min(np.linalg.norm(q - expect), np.linalg.norm(q + expect)) < 1e-9


def test_rotation_angle_identity():
    rng = np.random.default_rng(7)
    q = random_quats(rng, 100)
    r = rot.quat_to_rotmat(q)
    angles = rot.rotation_angle(r, r)
    np.testing.assert_allclose(angles, 0.0, atol=1e-7)


def test_rotation_angle_against_scipy():
    rng = np.random.default_rng(8)
    qa = random_quats(rng, 100)
    qb = random_quats(rng, 100)
    got = rot.rotation_angle(rot.quat_to_rotmat(qa), rot.quat_to_rotmat(qb))
    expect = (as_scipy(qa).inv() * as_scipy(qb)).magnitude()
    np.testing.assert_allclose(got, expect, atol=1e-9)


@pytest.mark.parametrize("shape", [(4,), (3, 4), (2, 5, 4)])
def test_broadcasting_shapes(shape):
    rng = np.random.default_rng(9)
    q = rng.normal(size=shape)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    assert rot.quat_to_rotmat(q).shape == shape[:-1] + (3, 3)
    assert rot.rotation_vector_from_quat(q).shape == shape[:-1] + (3,)
    assert rot.quat_multiply(q, q).shape == shape
