import jax.numpy as jnp
import numpy as np
import pytest

from dojo import quat
from dojo.diff import perturb_theta
from dojo.ipsolver import (ConeLayout, NcpProblem, ProblemFunctions, SolverOptions, SolverPoint, alpha_orthant,
                           alpha_soc, build_jacobians, candidate_update, centering, cone_search, in_interior,
                           residual, solve, violations)
from dojo.mech import BodyConfig
from dojo.models import box, free_body
from dojo.ncp import assemble_ncp, contact_impulses, initial_point, next_configs

I4 = np.array([1.0, 0.0, 0.0, 0.0])


def in_closed_soc(y, tol=1e-12):
    return y[0] - np.linalg.norm(y[1:]) >= -tol


def bisect_soc(y, d, iters=200):
    lo, hi = 0.0, 1.0
    if in_closed_soc(y + d, 0.0):
        return 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if in_closed_soc(y + mid * d, 0.0) else (lo, mid)
    return lo


# --- step lengths -------------------------------------------------------------

def test_alpha_orthant_examples():
    assert alpha_orthant([1, 1], [1, 1]) == 1.0
    assert alpha_orthant([1, 1], [-2, -1]) == 0.5
    assert alpha_orthant([1.0], [-0.5]) == 1.0


def test_alpha_soc_examples():
    y = np.array([2.0, 0.5, -0.3])
    assert alpha_soc(y, y) == 1.0
    assert alpha_soc([1, 0, 0], [0, -2, 0]) == pytest.approx(0.5, abs=1e-15)
    y, d = np.array([2.0, 1.0, 0.0]), np.array([-1.0, 0.0, 0.0])
    a = alpha_soc(y, d)
    assert a == pytest.approx(bisect_soc(y, d), abs=1e-10)
    assert abs((y + a * d)[0] - np.linalg.norm((y + a * d)[1:])) < 1e-10


def test_alpha_soc_random_against_bisection(rng):
    for _ in range(200):
        yr = rng.normal(size=2)
        y = np.concatenate([[np.linalg.norm(yr) + rng.uniform(0.01, 1.0)], yr])
        d = rng.normal(size=3) * rng.uniform(0.1, 10.0)
        a = alpha_soc(y, d)
        assert a == pytest.approx(bisect_soc(y, d), abs=1e-9)
        assert in_closed_soc(y + a * d, 1e-10)
        if a < 1.0:
            assert not in_closed_soc(y + 1.01 * a * d, 0.0)


def test_cone_search_examples():
    layout = ConeLayout(2, (3,))
    b = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    c = b.copy()
    up = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    assert cone_search(layout, b, c, up, up) == 1.0
    # orthant limits at 0.3, soc at 0.7
    db = np.array([-1 / 0.3, 0.0, 0.0, -1 / 0.7, 0.0])
    assert cone_search(layout, b, c, db, np.zeros(5)) == pytest.approx(0.3)
    assert alpha_soc(b[2:], db[2:]) == pytest.approx(0.7)
    # halving the orthant factor doubles the orthant ratio: 0.3 -> 0.15
    assert cone_search(ConeLayout(1), np.ones(1), np.ones(1), np.array([-2.0]), np.zeros(1), tau_ort=0.5) \
        == pytest.approx(0.25)
    assert cone_search(ConeLayout(1), np.ones(1), np.ones(1), np.array([-2.0]), np.zeros(1)) == pytest.approx(0.5)


# --- toy problems ---------------------------------------------------------------

def qp_problem():
    """minimize x^2/2 subject to x >= 1, written as an NCP with slack s and multiplier lam."""
    def fn(a, b, c, theta):
        return jnp.stack([a[0] - 1.0 - b[0], a[0] - c[0]])
    return NcpProblem(1, 0, ConeLayout(1), np.zeros(1), ProblemFunctions.from_fn(fn))


def test_violations_examples():
    prob = qp_problem()
    assert violations(prob, SolverPoint(np.array([1.0]), np.array([0.0]), np.array([1.0]))) == (0.0, 0.0)
    assert violations(prob, SolverPoint(np.array([1.0]), np.array([1.0]), np.array([1.0])))[1] == 1.0

    def fn(a, b, c, theta):
        return a
    soc = NcpProblem(1, 0, ConeLayout(0, (3,)), np.zeros(1), ProblemFunctions.from_fn(fn))
    e = np.array([1.0, 0.0, 0.0])
    assert violations(soc, SolverPoint(np.zeros(1), e, e))[1] == 1.0


def test_centering_examples():
    layout = ConeLayout(2)
    b = c = np.ones(2)
    mu, sigma = centering(b, c, 0.0, -b, -c, layout)
    assert mu == 1.0 and sigma == 1.0
    mu, sigma = centering(b, c, 1.0, -b, np.zeros(2), layout)
    assert sigma == 0.0
    assert centering(np.zeros(2), c, 1.0, b, c, layout) == (0.0, 0.0)


def test_candidate_update_examples():
    def fn(a, b, c, theta):
        return jnp.concatenate([a[:2], quat.vmat() @ a[2:6]])
    prob = NcpProblem(2, 1, ConeLayout(1), np.zeros(1), ProblemFunctions.from_fn(fn))
    q = quat.from_axis_angle([1, 1, 0], 0.7)
    w = SolverPoint(np.concatenate([[1.0, 2.0], q]), np.ones(1), np.ones(1))
    delta = np.array([0.5, -1.0, 0.2, 0.1, -0.3, 0.4, -0.2])
    same = candidate_update(prob, w, delta, 0.0)
    assert np.array_equal(same.a, w.a) and np.array_equal(same.b, w.b)
    moved = candidate_update(prob, w, delta, 0.5)
    assert np.allclose(moved.a[:2], [1.25, 1.5])
    assert np.linalg.norm(moved.a[2:]) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(moved.a[2:], quat.quat_mul(q, quat.phi_map(0.5 * delta[2:5])), atol=1e-14)
    assert moved.b[0] == pytest.approx(1.2) and moved.c[0] == pytest.approx(0.9)


def test_toy_qp_solution():
    prob = qp_problem()
    res = solve(prob, SolverPoint(np.array([3.0]), np.ones(1), np.ones(1)), SolverOptions(r_tol=1e-10,
                                                                                         kappa_tol=1e-10))
    assert res.converged
    assert res.w.a[0] == pytest.approx(1.0, abs=1e-8) and res.w.c[0] == pytest.approx(1.0, abs=1e-8)


def test_build_jacobians_without_quaternions_is_plain_jacobian():
    prob = qp_problem()
    w = SolverPoint(np.array([0.7]), np.array([0.4]), np.array([2.0]))
    R = build_jacobians(prob, w)
    expected = np.array([[1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 2.0, 0.4]])
    assert np.allclose(R, expected)


def test_build_jacobians_quaternion_toy():
    def fn(a, b, c, theta):
        return jnp.asarray(quat.vmat()) @ a
    prob = NcpProblem(0, 1, ConeLayout(0), np.zeros(1), ProblemFunctions.from_fn(fn))
    q = quat.from_axis_angle([0.2, -1, 0.5], 1.1)
    R = build_jacobians(prob, SolverPoint(q, np.zeros(0), np.zeros(0)))
    G = quat.lmat(q) @ quat.HMAT
    assert np.allclose(R, quat.vmat() @ G, atol=1e-15)
    assert np.linalg.matrix_rank(R) == 3


# --- assembled problems --------------------------------------------------------------

def cube_problem():
    mech = box((0.1, 0.1, 0.1), friction=0.5, timestep=0.01)
    q = quat.from_axis_angle([1, 2, 3], 0.3)
    zm = [BodyConfig(np.array([0.0, 0, 0.2]), q)]
    z = [BodyConfig(np.array([0.005, 0, 0.19]), q)]
    return mech, assemble_ncp(mech, zm, z)


def tangent_fd(prob, w, eps=1e-6):
    cols = []
    for k in range(prob.n):
        e = np.zeros(prob.n)
        e[k] = eps
        rp = residual(prob, candidate_update(prob, w, e, 1.0), 0.0)
        rm = residual(prob, candidate_update(prob, w, -e, 1.0), 0.0)
        cols.append((rp - rm) / (2 * eps))
    return np.column_stack(cols)


def rel_err(A, B):
    return np.max(np.abs(A - B)) / max(np.max(np.abs(B)), 1e-12)


def test_build_jacobians_match_finite_differences():
    mech, prob = cube_problem()
    res = solve(prob, initial_point(prob), SolverOptions(r_tol=1e-8, kappa_tol=1e-8))
    w = res.w
    w.b[:] += 0.05  # stay off the solution so every block is exercised
    R, D = build_jacobians(prob, w, with_data=True)
    assert rel_err(R, tangent_fd(prob, w)) < 1e-5
    eps = 1e-6
    cols = []
    for k in range(D.shape[1]):
        d = np.zeros(D.shape[1])
        d[k] = 1.0
        rp = residual(prob.with_theta(perturb_theta(prob, d, eps)), w, 0.0)
        rm = residual(prob.with_theta(perturb_theta(prob, d, -eps)), w, 0.0)
        cols.append((rp - rm) / (2 * eps))
    assert rel_err(D, np.column_stack(cols)) < 1e-5


def test_free_fall_step_matches_analytic():
    h = 0.01
    mech = free_body(timestep=h)
    zm = [BodyConfig(np.array([0.0, 0, 1.0]), I4)]
    z = [BodyConfig(np.array([0.01, -0.02, 1.0]), I4)]
    prob = assemble_ncp(mech, zm, z)
    res = solve(prob, initial_point(prob))
    assert res.converged
    p = next_configs(prob, res.w)[0].p
    assert np.allclose(p, 2 * z[0].p - zm[0].p + h * h * np.array([0, 0, -9.81]), atol=1e-10)


def test_resting_box_impulse_balance():
    h = 0.01
    mech = box((0.1, 0.1, 0.1), mass=1.0, friction=0.5, timestep=h)
    rest = [BodyConfig(np.array([0.0, 0, 0.1]), I4)]
    prob = assemble_ncp(mech, rest, rest)
    # the rest gap scales like kappa / gamma and feeds back into the impulse through m * gap / h
    res = solve(prob, initial_point(prob), SolverOptions(r_tol=1e-12, kappa_tol=1e-12))
    assert res.converged
    total = sum(imp.gamma for imp in contact_impulses(prob, res.w))
    assert total == pytest.approx(9.81 * h, abs=1e-8)
    gap = next_configs(prob, res.w)[0].p[2] - 0.1
    assert 0.0 <= gap <= 1e-6


def test_iterates_stay_interior_and_acceptance_is_monotone():
    mech, prob = cube_problem()
    res = solve(prob, initial_point(prob), SolverOptions(r_tol=1e-8, kappa_tol=1e-8))
    assert res.converged
    assert in_interior(prob.layout, res.w.b) and in_interior(prob.layout, res.w.c)
    hist = res.history
    for (r0, k0, _), (r1, k1, _) in zip(hist, hist[1:]):
        assert r1 <= r0 or k1 <= k0


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(r_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(beta_ls=1.0)
