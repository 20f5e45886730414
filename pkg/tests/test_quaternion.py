import numpy as np
import pytest
import torch

from cloudclean.model import quaternion_to_rotation, quaternion_to_rotation_torch


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def sandwich_rotate(q, v):
    """Rotate v by the unit quaternion q via q v q*."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    conj = q * [1, -1, -1, -1]
    return quat_multiply(quat_multiply(q, np.concatenate([[0.0], v])), conj)[1:]


def test_identity_quaternion():
    np.testing.assert_allclose(quaternion_to_rotation([1, 0, 0, 0]), np.eye(3),
                               atol=1e-15)


def test_pi_rotation_about_x():
    np.testing.assert_allclose(quaternion_to_rotation([0, 1, 0, 0]),
                               np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_zero_quaternion_rejected():
    with pytest.raises(ValueError):
        quaternion_to_rotation([0, 0, 0, 0])


def test_matches_sandwich_product_oracle(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        R = quaternion_to_rotation(q)
        v = rng.normal(size=3)
        np.testing.assert_allclose(R @ v, sandwich_rotate(q, v), atol=1e-12)


def test_always_proper_rotation(rng):
    for _ in range(200):
        q = rng.normal(size=4) * rng.uniform(0.1, 10)
        R = quaternion_to_rotation(q)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1) < 1e-12


def test_torch_variant_matches_numpy(rng):
    q = rng.normal(size=(20, 4))
    R_np = np.stack([quaternion_to_rotation(row) for row in q])
    R_t = quaternion_to_rotation_torch(torch.as_tensor(q)).numpy()
    np.testing.assert_allclose(R_t, R_np, atol=1e-9)


def test_torch_zero_quaternion_yields_identity():
    R = quaternion_to_rotation_torch(torch.zeros(1, 4))
    np.testing.assert_allclose(R.numpy()[0], np.eye(3), atol=1e-12)
