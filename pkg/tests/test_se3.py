import numpy as np
import pytest

from warpdepth import se3
from warpdepth.se3 import SE3Transform, Twist


def random_twist(rng, rot_scale=0.8):
    u = rng.standard_normal(3) * rot_scale
    n = np.linalg.norm(u)
    if n >= 3.1:
        u *= 3.0 / n
    return Twist(u, rng.standard_normal(3))


def test_zero_twist_is_identity():
    t = se3.twist_to_transform(Twist.zero())
    assert np.array_equal(t.rotation, np.eye(3))
    assert np.array_equal(t.translation, np.zeros(3))


def test_pure_translation():
    t = se3.twist_to_transform(Twist(np.zeros(3), np.array([1.0, 2.0, 3.0])))
    assert np.array_equal(t.rotation, np.eye(3))
    assert np.array_equal(t.translation, [1.0, 2.0, 3.0])


def test_quarter_turn_about_z():
    # closed-form Rodrigues for u = (0, 0, pi/2)
    t = se3.twist_to_transform(Twist(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3)))
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(t.rotation, expected, atol=1e-15)


def test_twist_domain_enforced():
    with pytest.raises(ValueError):
        Twist(np.array([np.pi, 0.0, 0.0]), np.zeros(3))


def test_rotations_orthonormal_for_random_twists():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = se3.twist_to_transform(random_twist(rng))
        assert np.max(np.abs(t.rotation.T @ t.rotation - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(t.rotation) - 1.0) < 1e-9


def test_small_angle_branch_matches_closed_form():
    # just above the 1e-8 Taylor switch the closed form is still accurate;
    # the second-order expansion must agree with it to double precision
    u = np.array([3.0, -2.0, 1.0])
    u = u * 2e-8 / np.linalg.norm(u)
    closed = se3.rodrigues(u)  # closed-form branch
    k = se3.skew(u)
    taylor = np.eye(3) + k + 0.5 * (k @ k)
    assert np.max(np.abs(closed - taylor)) < 1e-15
    assert np.allclose(se3.rodrigues(np.zeros(3)), np.eye(3))


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(4)
    t = se3.twist_to_transform(random_twist(rng))
    ident = SE3Transform.identity()
    c = se3.compose(t, ident)
    assert np.allclose(c.rotation, t.rotation, atol=1e-15)
    assert np.allclose(c.translation, t.translation, atol=1e-15)
    roundtrip = se3.compose(t, se3.invert(t))
    assert np.max(np.abs(roundtrip.rotation - np.eye(3))) < 1e-9
    assert np.max(np.abs(roundtrip.translation)) < 1e-9


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = se3.twist_to_transform(random_twist(rng))
        b = se3.twist_to_transform(random_twist(rng))
        expected = a.matrix() @ b.matrix()
        got = se3.compose(a, b).matrix()
        assert np.allclose(got, expected, atol=1e-12)


def test_invert_pure_translation():
    t = SE3Transform(np.eye(3), np.array([1.0, 0.0, 0.0]))
    inv = se3.invert(t)
    assert np.array_equal(inv.translation, [-1.0, 0.0, 0.0])
    assert np.array_equal(se3.invert(SE3Transform.identity()).rotation, np.eye(3))


def test_transform_point_cases():
    p = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(se3.transform_point(SE3Transform.identity(), p), p)
    rz = se3.twist_to_transform(Twist(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3)))
    assert np.allclose(se3.transform_point(rz, p), [0.0, 1.0, 0.0], atol=1e-15)
    shift = SE3Transform(np.eye(3), np.array([0.0, 0.0, -0.5]))
    assert np.allclose(se3.transform_point(shift, [1.0, 1.0, 10.0]), [1.0, 1.0, 9.5])


def test_transform_is_isometry():
    rng = np.random.default_rng(6)
    t = se3.twist_to_transform(random_twist(rng))
    for _ in range(20):
        p, q = rng.standard_normal(3), rng.standard_normal(3)
        d0 = np.linalg.norm(p - q)
        d1 = np.linalg.norm(se3.transform_point(t, p) - se3.transform_point(t, q))
        assert abs(d0 - d1) < 1e-9


def test_twist_roundtrip_through_log():
    rng = np.random.default_rng(7)
    for _ in range(30):
        t = random_twist(rng)
        back = se3.transform_to_twist(se3.twist_to_transform(t))
        assert np.allclose(back.u, t.u, atol=1e-9)
        assert np.allclose(back.v, t.v, atol=1e-12)


def test_twist_jacobians_translation_block_is_identity():
    rng = np.random.default_rng(8)
    jac = se3.twist_jacobians(random_twist(rng), rng.standard_normal(3))
    assert np.array_equal(jac[:, 3:], np.eye(3))


def test_twist_jacobians_zero_rotation_is_negative_skew():
    p = np.array([1.0, 2.0, 3.0])
    jac = se3.twist_jacobians(Twist.zero(), p)
    assert np.allclose(jac[:, :3], -se3.skew(p), atol=1e-15)


def test_twist_jacobians_match_finite_differences():
    rng = np.random.default_rng(9)
    eps = 1e-7
    for _ in range(100):
        t = random_twist(rng, rot_scale=0.5)
        p = rng.standard_normal(3) * 3.0
        jac = se3.twist_jacobians(t, p)
        w0 = t.as_vector()
        fd = np.zeros((3, 6))
        for i in range(6):
            wp, wm = w0.copy(), w0.copy()
            wp[i] += eps
            wm[i] -= eps
            fp = se3.transform_point(se3.twist_to_transform(Twist.from_vector(wp)), p)
            fm = se3.transform_point(se3.twist_to_transform(Twist.from_vector(wm)), p)
            fd[:, i] = (fp - fm) / (2 * eps)
        rel = np.abs(jac - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() < 1e-5
