"""Primal-dual interior-point solver for cone-constrained NCPs with quaternion variables.

Problems have the form: find ``w = (a, b, c)`` with ``E(a, b, c; theta) = 0``,
``b o c = kappa e`` and ``b, c`` in ``K = R^n_+ x Q^l1 x ... x Q^lj``.  The
decision vector ``a`` holds Euclidean entries followed by unit quaternions;
search directions for quaternions live in their 3-dimensional tangent space.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import jax
import numpy as np

from . import quat
from .linsolve import BlockStructure, SingularMatrixError, factorize


@dataclass(frozen=True)
class ConeLayout:
    orthant_dim: int = 0
    soc_dims: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "soc_dims", tuple(int(d) for d in self.soc_dims))
        if self.orthant_dim < 0 or any(d < 2 for d in self.soc_dims):
            raise ValueError("invalid cone layout")

    @property
    def size(self) -> int:
        return self.orthant_dim + sum(self.soc_dims)

    @property
    def degree(self) -> int:
        return self.orthant_dim + len(self.soc_dims)

    def soc_slices(self):
        start = self.orthant_dim
        out = []
        for d in self.soc_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: self.orthant_dim] = 1.0
        for s in self.soc_slices():
            e[s.start] = 1.0
        return e


@dataclass
class SolverPoint:
    a: np.ndarray  # Euclidean entries, then 4 entries per quaternion
    b: np.ndarray
    c: np.ndarray

    def copy(self) -> "SolverPoint":
        return SolverPoint(self.a.copy(), self.b.copy(), self.c.copy())


@dataclass(frozen=True)
class SolverOptions:
    r_tol: float = 1e-5
    kappa_tol: float = 1e-5
    tau_soc_max: float = 0.99
    tau_min: float = 0.95
    beta_ls: float = 0.5
    max_iterations: int = 100
    max_linesearch: int = 25
    margin: float = 0.1
    linear_solver: str = "structured"
    max_quat_step: float = 0.5
    scaling: str = "none"
    homotopy: bool = True

    def __post_init__(self):
        if not (self.r_tol > 0 and self.kappa_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.beta_ls < 1:
            raise ValueError("line-search decay must lie in (0, 1)")
        if self.scaling not in ("nt", "none"):
            raise ValueError("scaling must be 'nt' or 'none'")


@dataclass
class ProblemFunctions:
    """Jitted equality residual and its Jacobians, built once per problem structure."""

    eq: Callable
    jac_w: Callable
    jac_theta: Callable

    @classmethod
    def from_fn(cls, fn: Callable) -> "ProblemFunctions":
        return cls(jax.jit(fn), jax.jit(jax.jacfwd(fn, argnums=(0, 1, 2))), jax.jit(jax.jacfwd(fn, argnums=3)))


@dataclass
class NcpProblem:
    n_euclid: int
    n_quat: int
    layout: ConeLayout
    theta: np.ndarray
    fns: ProblemFunctions
    theta_quat: tuple = ()  # start offsets of quaternions inside theta
    blocks: Optional[BlockStructure] = None
    info: object = None

    @property
    def n_a(self) -> int:
        return self.n_euclid + 3 * self.n_quat

    @property
    def n(self) -> int:
        return self.n_a + 2 * self.layout.size

    @property
    def n_theta(self) -> int:
        return self.theta.size - len(self.theta_quat)

    def with_theta(self, theta) -> "NcpProblem":
        out = copy.copy(self)
        out.theta = np.asarray(theta, dtype=float)
        return out

    def equality(self, w: SolverPoint) -> np.ndarray:
        return np.asarray(self.fns.eq(w.a, w.b, w.c, self.theta))


@dataclass
class SolveResult:
    w: SolverPoint
    status: str
    iterations: int
    kappa_final: float
    r_vio: float
    kappa_vio: float
    factorization: object = None
    sensitivity: Optional[np.ndarray] = None
    cached: Optional[SolverPoint] = None
    history: list = field(default_factory=list)
    rescued: bool = False  # True when the kappa-continuation fallback produced w

    @property
    def converged(self) -> bool:
        return self.status == "converged"


STALL_WINDOW = 8  # consecutive tiny steps that count as jammed against a cone boundary
STALL_ALPHA = 1e-3


# --- cones ----------------------------------------------------------------

def cone_product(layout: ConeLayout, b, c) -> np.ndarray:
    out = np.empty(layout.size)
    n = layout.orthant_dim
    out[:n] = b[:n] * c[:n]
    for s in layout.soc_slices():
        bs, cs = b[s], c[s]
        out[s.start] = bs @ cs
        out[s.start + 1: s.stop] = bs[0] * cs[1:] + cs[0] * bs[1:]
    return out


def cone_product_jacobian(layout: ConeLayout, x) -> np.ndarray:
    """``d(x o y)/dy``; equals ``d(y o x)/dy`` because the product is symmetric."""
    m = np.zeros((layout.size, layout.size))
    n = layout.orthant_dim
    m[np.arange(n), np.arange(n)] = x[:n]
    for s in layout.soc_slices():
        xs = x[s]
        blk = xs[0] * np.eye(len(xs))
        blk[0, :] = xs
        blk[:, 0] = xs
        m[s, s] = blk
    return m


def nt_scaling(b, c):
    """Nesterov-Todd scaling of one second-order-cone pair.

    Returns ``(W, Winv, lam)`` with ``W`` symmetric, ``W c = Winv b = lam``.
    """
    J = np.ones(len(b))
    J[1:] = -1.0
    nb, nc = np.sqrt(b @ (J * b)), np.sqrt(c @ (J * c))
    bb, cb = b / nb, c / nc
    gamma = np.sqrt(0.5 * (1.0 + bb @ cb))
    wb = (bb + J * cb) / (2.0 * gamma)
    w0, w1 = wb[0], wb[1:]
    root = np.empty((len(b), len(b)))
    root[0, 0] = w0
    root[0, 1:] = root[1:, 0] = w1
    root[1:, 1:] = np.eye(len(b) - 1) + np.outer(w1, w1) / (1.0 + w0)
    beta = np.sqrt(nb / nc)
    W = beta * root
    # the inverse of the hyperbolic root is its reflection through J
    Winv = (J[:, None] * root * J[None, :]) / beta
    return W, Winv, W @ c


def in_interior(layout: ConeLayout, y, margin: float = 0.0) -> bool:
    n = layout.orthant_dim
    if n and not np.all(y[:n] > margin):
        return False
    for s in layout.soc_slices():
        if not y[s.start] - np.linalg.norm(y[s.start + 1: s.stop]) > margin:
            return False
    return True


def interior_margin(layout: ConeLayout, y) -> float:
    vals = list(y[: layout.orthant_dim])
    vals += [y[s.start] - np.linalg.norm(y[s.start + 1: s.stop]) for s in layout.soc_slices()]
    return float(min(vals)) if vals else np.inf


def project_interior(layout: ConeLayout, y, margin: float) -> np.ndarray:
    y = np.array(y, dtype=float)
    n = layout.orthant_dim
    y[:n] = np.maximum(y[:n], margin)
    for s in layout.soc_slices():
        y[s.start] = max(y[s.start], np.linalg.norm(y[s.start + 1: s.stop]) + margin)
    return y


def _orthant_ratio(y, delta) -> float:
    neg = delta < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-y[neg] / delta[neg]))


def _soc_ratio(y, delta) -> float:
    y1, yr = y[0], y[1:]
    d1, dr = delta[0], delta[1:]
    nu = y1 * y1 - yr @ yr
    if not (nu > 0.0 and y1 > 0.0):
        return 0.0
    zeta = y1 * d1 - yr @ dr
    sq = np.sqrt(nu)
    rho1 = zeta / nu
    rhor = dr / sq - (zeta / sq + d1) / (y1 * sq + nu) * yr
    nr = np.linalg.norm(rhor)
    if nr > rho1:
        return 1.0 / (nr - rho1)
    if not np.isfinite(nr + rho1):
        return 0.0
    return np.inf


def alpha_orthant(y, delta) -> float:
    """Largest step in (0, 1] keeping ``y + alpha delta`` in the closed orthant."""
    return min(1.0, _orthant_ratio(np.asarray(y, float), np.asarray(delta, float)))


def alpha_soc(y, delta) -> float:
    """Largest step in (0, 1] keeping ``y + alpha delta`` in the closed second-order cone."""
    return min(1.0, _soc_ratio(np.asarray(y, float), np.asarray(delta, float)))


def cone_search(layout: ConeLayout, b, c, db, dc, tau_ort: float = 1.0, tau_soc: float = 1.0) -> float:
    """Step length over all cone blocks of ``b`` and ``c``.

    ``tau`` is a fraction-to-boundary factor: a block whose boundary is reached
    at ``alpha0`` contributes ``tau * alpha0``.
    """
    alpha = 1.0
    n = layout.orthant_dim
    if n:
        alpha = min(alpha, tau_ort * _orthant_ratio(b[:n], db[:n]), tau_ort * _orthant_ratio(c[:n], dc[:n]))
    for s in layout.soc_slices():
        alpha = min(alpha, tau_soc * _soc_ratio(b[s], db[s]), tau_soc * _soc_ratio(c[s], dc[s]))
    return float(alpha)


def centering(b, c, alpha_aff: float, db, dc, layout: ConeLayout):
    deg = layout.degree
    mu = float(b @ c) / deg if deg else 0.0
    if mu == 0.0:
        return 0.0, 0.0
    mu_aff = float((b + alpha_aff * db) @ (c + alpha_aff * dc)) / deg
    sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
    return mu, sigma


# --- residuals and Jacobians ---------------------------------------------

def residual(problem: NcpProblem, w: SolverPoint, kappa: float) -> np.ndarray:
    e = problem.equality(w)
    comp = cone_product(problem.layout, w.b, w.c) - kappa * problem.layout.identity()
    return np.concatenate([e, comp])


def violations(problem: NcpProblem, w: SolverPoint):
    e = problem.equality(w)
    r_vio = float(np.max(np.abs(e))) if e.size else 0.0
    layout = problem.layout
    prod = cone_product(layout, w.b, w.c)
    k_vio = 0.0
    n = layout.orthant_dim
    if n:
        k_vio = float(np.max(np.abs(prod[:n])))
    for s in layout.soc_slices():
        k_vio = max(k_vio, float(np.max(np.abs(prod[s]))))
    if not np.all(np.isfinite(e)):
        r_vio = np.inf
    return r_vio, k_vio


def _quat_blocks(problem: NcpProblem, a):
    ne = problem.n_euclid
    return [a[ne + 4 * k: ne + 4 * k + 4] for k in range(problem.n_quat)]


def build_jacobians(problem: NcpProblem, w: SolverPoint, with_data: bool = False):
    """Tangent-space Jacobians ``Rbar = R H_R`` and (optionally) ``Dbar = D H_D``."""
    layout = problem.layout
    ne, nq, nk = problem.n_euclid, problem.n_quat, layout.size
    da, db, dc = (np.asarray(x) for x in problem.fns.jac_w(w.a, w.b, w.c, problem.theta))
    n_eq = da.shape[0]
    rbar = np.zeros((n_eq + nk, problem.n))
    rbar[:n_eq, :ne] = da[:, :ne]
    for k, q in enumerate(_quat_blocks(problem, w.a)):
        g = quat.lmat(q) @ quat.HMAT
        rbar[:n_eq, ne + 3 * k: ne + 3 * k + 3] = da[:, ne + 4 * k: ne + 4 * k + 4] @ g
    na = ne + 3 * nq
    rbar[:n_eq, na: na + nk] = db
    rbar[:n_eq, na + nk:] = dc
    rbar[n_eq:, na: na + nk] = cone_product_jacobian(layout, w.c)
    rbar[n_eq:, na + nk:] = cone_product_jacobian(layout, w.b)
    if not with_data:
        return rbar
    return rbar, data_jacobian(problem, w)


def data_jacobian(problem: NcpProblem, w: SolverPoint) -> np.ndarray:
    d = np.asarray(problem.fns.jac_theta(w.a, w.b, w.c, problem.theta))
    nk = problem.layout.size
    cols = []
    start = 0
    for off in problem.theta_quat:
        cols.append(d[:, start:off])
        q = problem.theta[off: off + 4]
        cols.append(d[:, off: off + 4] @ (quat.lmat(q / np.linalg.norm(q)) @ quat.HMAT))
        start = off + 4
    cols.append(d[:, start:])
    dbar = np.hstack(cols)
    return np.vstack([dbar, np.zeros((nk, dbar.shape[1]))])


def candidate_update(problem: NcpProblem, w: SolverPoint, delta: np.ndarray, alpha: float) -> SolverPoint:
    if alpha == 0.0:
        return w.copy()
    ne, nq, nk = problem.n_euclid, problem.n_quat, problem.layout.size
    na = ne + 3 * nq
    a = w.a.copy()
    a[:ne] += alpha * delta[:ne]
    for k in range(nq):
        q = a[ne + 4 * k: ne + 4 * k + 4]
        step = quat.phi_map(alpha * delta[ne + 3 * k: ne + 3 * k + 3])
        qn = quat.lmat(q) @ step
        a[ne + 4 * k: ne + 4 * k + 4] = qn / np.linalg.norm(qn)
    b = w.b + alpha * delta[na: na + nk]
    c = w.c + alpha * delta[na + nk:]
    return SolverPoint(a, b, c)


def _quat_step_cap(problem: NcpProblem, delta: np.ndarray, cap: float) -> float:
    ne = problem.n_euclid
    norms = [np.linalg.norm(delta[ne + 3 * k: ne + 3 * k + 3]) for k in range(problem.n_quat)]
    biggest = max(norms, default=0.0)
    return 1.0 if biggest <= cap else cap / biggest


def _split(problem: NcpProblem, delta: np.ndarray):
    na, nk = problem.n_a, problem.layout.size
    return delta[na: na + nk], delta[na + nk:]


# --- Newton systems --------------------------------------------------------

def _scaled_system(problem: NcpProblem, w: SolverPoint, method: str):
    """Newton matrix and affine residual with NT-scaled cone rows.

    Orthant rows are left alone; each second-order block linearizes
    ``lam o (W dc + Winv db) = kappa e - lam o lam`` instead of ``b o c``.
    Only the search direction changes, not the fixed point.
    """
    layout = problem.layout
    rbar = build_jacobians(problem, w)
    r = residual(problem, w, 0.0)
    n_eq = rbar.shape[0] - layout.size
    na, nk = problem.n_a, layout.size
    for s in layout.soc_slices():
        W, Winv, lam = nt_scaling(w.b[s], w.c[s])
        arw = lam[0] * np.eye(len(lam))
        arw[0, :] = lam
        arw[:, 0] = lam
        rows = slice(n_eq + s.start, n_eq + s.stop)
        rbar[rows, :] = 0.0
        rbar[rows, na + s.start: na + s.stop] = arw @ Winv
        rbar[rows, na + nk + s.start: na + nk + s.stop] = arw @ W
        r[rows] = np.concatenate([[lam @ lam], 2.0 * lam[0] * lam[1:]])
    return factorize(rbar, problem.blocks, method), r


def factorize_at(problem: NcpProblem, w: SolverPoint, method: str = "structured"):
    return factorize(build_jacobians(problem, w), problem.blocks, method)


def sensitivity(problem: NcpProblem, w: SolverPoint, fact=None, method: str = "structured") -> np.ndarray:
    """Implicit-function-theorem sensitivity ``dw/dtheta = -Rbar^-1 Dbar`` (tangent coordinates)."""
    if fact is None:
        fact = factorize_at(problem, w, method)
    return -fact.solve(data_jacobian(problem, w))


def solve(problem: NcpProblem, w0: SolverPoint, opts: SolverOptions = SolverOptions(),
          want_sensitivity: bool = False, kappa_cache: Optional[float] = None,
          on_iterate: Optional[Callable] = None) -> SolveResult:
    """Predictor-corrector interior-point iteration.

    ``on_iterate(w)`` is called with every accepted iterate, for diagnostics.
    """
    layout = problem.layout
    w = SolverPoint(np.array(w0.a, dtype=float), project_interior(layout, w0.b, opts.margin),
                    project_interior(layout, w0.c, opts.margin))
    if not np.all(np.isfinite(w.a)):
        raise ValueError("initial point is not finite")
    r_vio, k_vio = violations(problem, w)
    history = [(r_vio, k_vio, 0.0)]
    cached = w.copy() if kappa_cache is not None and k_vio < kappa_cache else None
    kappa = np.nan
    status = "max_iter"
    iters = 0
    e = layout.identity()
    for iters in range(opts.max_iterations + 1):
        if r_vio < opts.r_tol and k_vio < opts.kappa_tol:
            status = "converged"
            break
        if iters == opts.max_iterations:
            break
        try:
            if opts.scaling == "nt":
                fact, r_aff = _scaled_system(problem, w, opts.linear_solver)
            else:
                fact, r_aff = factorize_at(problem, w, opts.linear_solver), residual(problem, w, 0.0)
        except SingularMatrixError:
            status = "singular"
            break
        d_aff = -fact.solve(r_aff)
        db, dc = _split(problem, d_aff)
        a_aff = cone_search(layout, w.b, w.c, db, dc, 1.0, 1.0)
        mu, sigma = centering(w.b, w.c, a_aff, db, dc, layout)
        kappa = max(sigma * mu, opts.kappa_tol / 5.0)
        # the corrector only changes the complementarity target
        rhs = r_aff.copy()
        rhs[rhs.size - layout.size:] -= kappa * e
        delta = -fact.solve(rhs)
        if not np.all(np.isfinite(delta)):
            status = "singular"
            break
        tau_ort = max(opts.tau_min, 1.0 - max(r_vio, k_vio) ** 2)
        tau_soc = min(opts.tau_soc_max, tau_ort)
        db, dc = _split(problem, delta)
        alpha = cone_search(layout, w.b, w.c, db, dc, tau_ort, tau_soc)
        alpha = min(alpha, _quat_step_cap(problem, delta, opts.max_quat_step))
        r_best, k_best = r_vio, k_vio
        accepted = False
        for _ in range(opts.max_linesearch):
            cand = candidate_update(problem, w, delta, alpha)
            if not (in_interior(layout, cand.b) and in_interior(layout, cand.c)):
                alpha *= opts.beta_ls
                continue
            r_new, k_new = violations(problem, cand)
            if r_new <= r_best or k_new <= k_best:
                accepted = True
                break
            alpha *= opts.beta_ls
        if not accepted:
            status = "linesearch_fail"
            break
        w, r_vio, k_vio = cand, r_new, k_new
        history.append((r_vio, k_vio, alpha))
        if on_iterate is not None:
            on_iterate(w)
        if len(history) > STALL_WINDOW and all(h[2] < STALL_ALPHA for h in history[-STALL_WINDOW:]):
            status = "stalled"
            break
        if kappa_cache is not None and cached is None and k_vio < kappa_cache:
            cached = w.copy()
    result = SolveResult(w, status, iters, float(kappa), r_vio, k_vio, cached=cached, history=history)
    if not result.converged and opts.homotopy:
        result = _continuation(problem, w0, opts, kappa_cache, result)
    if want_sensitivity and result.converged:
        result.factorization = factorize_at(problem, result.w, opts.linear_solver)
        result.sensitivity = sensitivity(problem, result.w, result.factorization)
    return result


def _continuation(problem: NcpProblem, w0: SolverPoint, opts: SolverOptions, kappa_cache, failed: SolveResult):
    """Fallback: follow the central path from kappa = 1 down to the tolerance.

    Used only when the predictor-corrector stalls against a cone boundary; the
    fixed point is the same, only the route to it differs.
    """
    layout = problem.layout
    w = SolverPoint(np.array(w0.a, dtype=float), project_interior(layout, w0.b, opts.margin),
                    project_interior(layout, w0.c, opts.margin))
    target = opts.kappa_tol / 5.0
    kappas = list(np.geomspace(1.0, target, 2 * int(np.ceil(np.log10(1.0 / target))) + 1))
    if kappa_cache is not None and target < kappa_cache < 1.0:
        kappas = sorted(set(kappas) | {kappa_cache}, reverse=True)
    cached = None
    total = failed.iterations
    try:
        for k in kappas:
            w, nr, n = _central_newton(problem, w, k, min(opts.r_tol, k) * 1e-2, 50, opts.linear_solver)
            total += n
            if k == kappa_cache and nr < 1e-8:
                cached = w.copy()
    except (np.linalg.LinAlgError, ValueError):
        return failed
    r_vio, k_vio = violations(problem, w)
    if not (r_vio < opts.r_tol and k_vio < opts.kappa_tol):
        return failed
    return SolveResult(w, "converged", total, target, r_vio, k_vio, cached=cached,
                       history=failed.history, rescued=True)


def solve_central(problem: NcpProblem, w0: SolverPoint, kappa: float, tol: float = 1e-12,
                  max_iterations: int = 60, method: str = "structured"):
    """Newton's method on ``r(w; theta, kappa) = 0`` with kappa held fixed.

    Returns ``(w, residual_norm, factorization)``; the factorization is of the
    Jacobian at the returned point.
    """
    w, nr, _ = _central_newton(problem, w0, kappa, tol, max_iterations, method)
    return w, nr, factorize_at(problem, w, method)


def _central_newton(problem, w0, kappa, tol, max_iterations, method):
    layout = problem.layout
    w = SolverPoint(np.array(w0.a, dtype=float), project_interior(layout, w0.b, 1e-12),
                    project_interior(layout, w0.c, 1e-12))
    r = residual(problem, w, kappa)
    nr = float(np.max(np.abs(r))) if r.size else 0.0
    iters = 0
    for iters in range(1, max_iterations + 1):
        if nr < tol:
            iters -= 1
            break
        fact = factorize_at(problem, w, method)
        delta = -fact.solve(r)
        db, dc = _split(problem, delta)
        alpha = cone_search(layout, w.b, w.c, db, dc, 0.99, 0.99)
        alpha = min(alpha, _quat_step_cap(problem, delta, 0.5))
        improved = False
        for _ in range(40):
            cand = candidate_update(problem, w, delta, alpha)
            if not (in_interior(layout, cand.b) and in_interior(layout, cand.c)):
                alpha *= 0.5
                continue
            r_new = residual(problem, cand, kappa)
            n_new = float(np.max(np.abs(r_new)))
            if n_new < nr:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        w, r, nr = cand, r_new, n_new
    return w, nr, iters
