"""Implicit gradients of one simulation step.

Rows of every Jacobian are the tangent coordinates of ``z+`` ordered per body
as ``(p, dq)``, where ``dq`` perturbs ``q+`` as ``q+ * phi(dq)``.  Columns of
state blocks use the same convention; the remaining blocks follow the problem
data layout of :mod:`dojo.ncp`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .ipsolver import NcpProblem, SolveResult, SolverOptions, data_jacobian, factorize_at, solve, solve_central
from .ncp import assemble_ncp, initial_point, next_configs

CENTRAL_TOL = 1e-10


@dataclass
class StepJacobians:
    d_zprev: np.ndarray
    d_z: np.ndarray
    d_u: np.ndarray
    d_params: np.ndarray  # columns: c_f (P), offsets (3P), m (N), J (6N), h
    d_gravity: np.ndarray
    kappa_grad: float
    fallback: bool = False  # True when the gradient was taken at the final iterate
    full: np.ndarray = None  # all columns, tangent problem-data order

    def param_columns(self, P: int, N: int) -> dict:
        o = 0
        out = {}
        for name, size in (("c_f", P), ("offsets", 3 * P), ("m", N), ("J", 6 * N), ("h", 1)):
            out[name] = slice(o, o + size)
            o += size
        return out


def tangent_theta_size(problem: NcpProblem) -> int:
    return problem.theta.size - len(problem.theta_quat)


def perturb_theta(problem: NcpProblem, direction, scale: float = 1.0) -> np.ndarray:
    """Move ``theta`` along a tangent direction; quaternions move as ``q * phi(scale d)``."""
    d = np.asarray(direction, dtype=float) * scale
    theta = problem.theta
    out = np.empty_like(theta)
    src = dst = 0
    for off in problem.theta_quat:
        n = off - src
        out[src:off] = theta[src:off] + d[dst: dst + n]
        dst += n
        out[off: off + 4] = quat.quat_mul(theta[off: off + 4], quat.phi_map(d[dst: dst + 3]))
        dst += 3
        src = off + 4
    out[src:] = theta[src:] + d[dst:]
    return out


def _split_columns(problem: NcpProblem, S: np.ndarray, kappa: float, fallback: bool) -> StepJacobians:
    info = problem.info
    N = info.nbodies
    P = len(info.contact_modes)
    c = [0]
    for size in (6 * N, 6 * N, 6 * N, P + 3 * P + N + 6 * N + 1, 3):
        c.append(c[-1] + size)
    blocks = [S[:, c[i]: c[i + 1]] for i in range(5)]
    return StepJacobians(*blocks, kappa_grad=kappa, fallback=fallback, full=S)


def central_point(problem: NcpProblem, result: SolveResult, kappa: float):
    """Point on the central path at ``kappa`` near the solver's trajectory.

    Returns ``(w, factorization, fallback)``.
    """
    start = result.cached if result.cached is not None else result.w
    try:
        w, nr, fact = solve_central(problem, start, kappa, tol=CENTRAL_TOL)
        if nr < 1e-8:
            return w, fact, result.cached is None
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        w, nr, fact = _walk_central(problem, kappa)
        if nr < 1e-8:
            return w, fact, False
    except (np.linalg.LinAlgError, ValueError):
        pass
    return result.w, factorize_at(problem, result.w), True


def _walk_central(problem: NcpProblem, kappa: float):
    """Follow the central path from ``kappa = 1`` down to ``kappa`` in quarter decades."""
    w, nr, fact = initial_point(problem), np.inf, None
    for k in np.geomspace(1.0, kappa, max(2, int(np.ceil(np.log10(1.0 / kappa) * 4)) + 1)):
        w, nr, fact = solve_central(problem, w, float(k), tol=CENTRAL_TOL)
    return w, nr, fact


def implicit_step_gradients(problem: NcpProblem, result: SolveResult, kappa_grad: float = 3e-4) -> StepJacobians:
    """``dz+/dtheta = -(Rbar^-1 Dbar)`` restricted to the ``z+`` rows, evaluated at ``kappa_grad``."""
    if not result.converged:
        raise ValueError("gradients require a converged solve")
    w, fact, fallback = central_point(problem, result, kappa_grad)
    dbar = data_jacobian(problem, w)
    S = -fact.solve(dbar)[problem.info.zplus_rows()]
    return _split_columns(problem, S, kappa_grad, fallback)


def zplus_difference(za, zb) -> np.ndarray:
    """Tangent difference ``za - zb`` per body as ``(p, V(conj(qb) qa))``."""
    out = []
    for a, b in zip(za, zb):
        out.append(a.p - b.p)
        out.append((quat.lmat(quat.conj(b.q)) @ a.q)[1:])
    return np.concatenate(out)


def _central_step(problem: NcpProblem, kappa: float, opts: SolverOptions, start=None):
    if start is None:
        res = solve(problem, initial_point(problem), opts)
        start = res.w
    w, nr, _ = solve_central(problem, start, kappa, tol=CENTRAL_TOL)
    if nr > 1e-8:
        # far from the converged point at large kappa: walk down the central path instead
        w, nr, _ = _walk_central(problem, kappa)
    if nr > 1e-8:
        raise RuntimeError(f"central-path solve failed (residual {nr:.3e})")
    return w


def fd_step_oracle(mech, z_prev, z, u, direction, delta: float = 1e-6, kappa_fixed: float = 3e-4,
                   opts: SolverOptions = SolverOptions(r_tol=1e-10, kappa_tol=1e-6)) -> np.ndarray:
    """Central difference of the kappa-fixed step map along a tangent data direction."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    problem = assemble_ncp(mech, z_prev, z, u)
    direction = np.asarray(direction, dtype=float)
    if not np.any(direction):
        return np.zeros(6 * mech.nbodies)
    w0 = _central_step(problem, kappa_fixed, opts)
    z0 = next_configs(problem, w0)
    outs = []
    for sgn in (1.0, -1.0):
        pert = problem.with_theta(perturb_theta(problem, direction, sgn * delta))
        w = _central_step(pert, kappa_fixed, opts, start=w0)
        outs.append(zplus_difference(next_configs(pert, w), z0))
    return (outs[0] - outs[1]) / (2.0 * delta)
