import jax
import numpy as np
import pytest

from dojo import quat
from dojo.dyn import (BodyInput, body_momentum, linear_residual, momentum_out, psi_from_configs, recover_q_plus,
                      rotational_residual)
from dojo.mech import Body, BodyConfig

G = np.array([0.0, 0.0, -9.81])
H = 0.01


def test_linear_residual_at_rest():
    b = Body(0, 2.0)
    p = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(linear_residual(b, p, p, p, np.zeros(3), H, np.zeros(3), np.zeros(3)), np.zeros(3))


def test_free_fall_root():
    b = Body(0, 2.0)
    p_prev, p = np.array([0.0, 0.0, 1.0]), np.array([0.01, 0.0, 0.99])
    p_next = 2 * p - p_prev + H * H * G
    r = linear_residual(b, p_prev, p, p_next, G, H, np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(r, np.zeros(3), atol=1e-12)
    off = linear_residual(b, p_prev, p, p_next + 1e-3, G, H, np.zeros(3), np.zeros(3))
    assert np.linalg.norm(off) > 0.1


def test_static_contact_impulse():
    b = Body(0, 1.5)
    p = np.zeros(3)
    impulse = np.array([0.0, 0.0, b.mass * 9.81 * H])
    np.testing.assert_allclose(linear_residual(b, p, p, p, G, H, impulse, np.zeros(3)), np.zeros(3), atol=1e-15)


def test_translation_invariance(rng):
    b = Body(0, 1.0)
    ps = rng.normal(size=(3, 3))
    shift = rng.normal(size=3)
    r0 = linear_residual(b, *ps, np.zeros(3), H, np.zeros(3), np.zeros(3))
    r1 = linear_residual(b, *(ps + shift), np.zeros(3), H, np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(r0, r1, atol=1e-10)


def test_rotational_rest():
    b = Body(0, 1.0, np.diag([0.1, 0.2, 0.3]))
    np.testing.assert_array_equal(rotational_residual(b, np.zeros(3), np.zeros(3)), np.zeros(3))


def test_unit_inertia_preserves_spin(rng):
    b = Body(0, 1.0, np.eye(3))
    psi = 0.3 * rng.normal(size=3) / np.sqrt(3)
    np.testing.assert_allclose(rotational_residual(b, psi, psi), np.zeros(3), atol=1e-15)
    assert np.linalg.norm(rotational_residual(b, psi, 1.01 * psi)) > 1e-4


def test_rotational_jacobian_finite_difference(rng):
    J = np.array([[0.2, 0.01, 0.0], [0.01, 0.3, 0.02], [0.0, 0.02, 0.4]])
    b = Body(0, 1.0, J)
    psi, psi_next = 0.2 * rng.normal(size=3), 0.2 * rng.normal(size=3)
    analytic = np.asarray(jax.jacfwd(lambda x: momentum_out(J, x))(psi_next))
    fd = np.zeros((3, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = 1e-6
        fd[:, k] = (rotational_residual(b, psi, psi_next + d) - rotational_residual(b, psi, psi_next - d)) / 2e-6
    assert np.max(np.abs(fd - analytic)) / np.max(np.abs(analytic)) < 1e-5


def test_rotational_domain_error():
    b = Body(0, 1.0)
    with pytest.raises(quat.QuaternionError):
        rotational_residual(b, np.array([1.0, 0.1, 0.0]), np.zeros(3))


def test_recover_q_plus_examples(rng):
    q = quat.random_unit(rng)
    np.testing.assert_allclose(recover_q_plus(q, np.zeros(3)), q, atol=1e-15)
    np.testing.assert_allclose(recover_q_plus(quat.IDENTITY, [0.6, 0, 0]), [0.8, 0.6, 0, 0], atol=1e-15)
    psi = np.array([0.1, -0.2, 0.3])
    q_next = recover_q_plus(q, psi)
    np.testing.assert_allclose(quat.quat_mul(quat.conj(q), q_next)[1:], psi, atol=1e-14)


def test_psi_from_configs_examples(rng):
    q = quat.random_unit(rng)
    np.testing.assert_allclose(psi_from_configs(q, q), np.zeros(3), atol=1e-15)
    np.testing.assert_allclose(psi_from_configs(quat.IDENTITY, [0.8, 0.6, 0, 0]), [0.6, 0, 0], atol=1e-15)
    with pytest.raises(quat.QuaternionError):
        psi_from_configs(quat.IDENTITY, [0.0, 1.0, 0.0, 0.0])


def test_body_input_validation():
    with pytest.raises(ValueError):
        BodyInput([np.nan, 0, 0], [0, 0, 0])


def test_momentum_of_translation():
    b = Body(0, 2.0)
    lin, ang = body_momentum(b, BodyConfig([0, 0, 0]), BodyConfig([0.01, 0, 0]), H)
    np.testing.assert_allclose(lin, [2.0, 0, 0])
    np.testing.assert_allclose(ang, np.zeros(3), atol=1e-15)
