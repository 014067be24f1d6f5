"""Contact constraints: signed distance, tangential velocity and friction-cone residuals.

A contact point sits at ``offset`` in the body frame; a positive ``radius``
turns it into a sphere.  The obstacle is a static halfspace ``n.x >= offset``
or, when ``sphere_center`` is set, a static sphere.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .quat import rotmat_j

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class SurfaceFrame:
    n: np.ndarray
    t1: np.ndarray
    t2: np.ndarray

    def matrix(self) -> np.ndarray:
        """Rows ``t1, t2``: projects world vectors onto the tangent plane."""
        return np.vstack([self.t1, self.t2])


def surface_frame(n) -> SurfaceFrame:
    """Right-handed frame ``(t1, t2, n)`` by Gram-Schmidt from x (y when n is close to x)."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    ref = _Y if abs(n @ _X) > 0.9 else _X
    t1 = ref - (ref @ n) * n
    t1 /= np.linalg.norm(t1)
    return SurfaceFrame(n, t1, np.cross(n, t1))


def frame_j(n):
    ref = jnp.where(jnp.abs(n[0]) > 0.9, jnp.asarray(_Y), jnp.asarray(_X))
    t1 = ref - (ref @ n) * n
    t1 = t1 / jnp.linalg.norm(t1)
    return t1, jnp.cross(n, t1)


def geometry_j(static, offset, p, q, p_next, q_next, h):
    """Gap, tangential velocity, contact normal/frame and lever arm at ``(z, z+)``.

    ``static`` is ``(radius, normal, surface_offset, sphere_center, sphere_radius)``.
    The velocity is that of the material point touching the obstacle at ``z+``.
    """
    radius, normal, surf_offset, center, sphere_radius = static
    R_next = rotmat_j(q_next)
    tip = p_next + R_next @ offset
    if center is None:
        n = jnp.asarray(normal)
        phi = n @ tip - surf_offset - radius
    else:
        d = tip - jnp.asarray(center)
        dist = jnp.sqrt(d @ d)
        n = d / dist
        phi = dist - sphere_radius - radius
    rc = offset - radius * (R_next.T @ n)
    lever = R_next @ rc
    vel = ((p_next - p) + (lever - rotmat_j(q) @ rc)) / h
    t1, t2 = frame_j(n)
    v = jnp.stack([t1 @ vel, t2 @ vel])
    return phi, v, n, t1, t2, lever


_geometry_jit = jax.jit(geometry_j, static_argnums=0)


def _static(spec):
    center = None if spec.sphere_center is None else tuple(spec.sphere_center)
    return (spec.radius, tuple(spec.surface_normal), spec.surface_offset, center, spec.sphere_radius)


def signed_distance(spec, config) -> float:
    """Gap between the contact geometry and the obstacle; negative means penetration."""
    phi, *_ = _geometry_jit(_static(spec), spec.offset, config.p, config.q, config.p, config.q, 1.0)
    return float(phi)


def tangential_velocity(spec, config, config_next, h: float) -> np.ndarray:
    """Finite-difference contact-point velocity over ``[z, z+]`` in the ``(t1, t2)`` basis."""
    if not h > 0:
        raise ValueError("time step must be positive")
    _, v, *_ = _geometry_jit(_static(spec), spec.offset, config.p, config.q, config_next.p, config_next.q, h)
    return np.asarray(v)


def soc_product(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.concatenate([[a @ b], a[0] * b[1:] + b[0] * a[1:]])


def nonlinear_cone_residual(v, gamma, beta, eta, c_f, kappa) -> np.ndarray:
    """Relaxed optimality conditions of the maximum-dissipation cone program (6 rows)."""
    v, beta, eta = (np.asarray(x, dtype=float) for x in (v, beta, eta))
    e = np.array([1.0, 0.0, 0.0])
    return np.concatenate([v - eta[1:3], [beta[0] - c_f * gamma], soc_product(beta, eta) - kappa * e])


def linearized_cone_residual(v, gamma, beta, psi, eta, c_f, kappa) -> np.ndarray:
    """Relaxed optimality conditions of the 4-vertex pyramid LCP (9 rows)."""
    v, beta, eta = (np.asarray(x, dtype=float) for x in (v, beta, eta))
    slack = c_f * gamma - beta.sum()
    return np.concatenate([np.concatenate([v, -v]) + psi - eta, [psi * slack - kappa], beta * eta - kappa])


def friction_from_beta(beta, cone_mode: str) -> np.ndarray:
    """Tangential impulse ``b`` in the ``(t1, t2)`` basis."""
    beta = np.asarray(beta, dtype=float)
    if cone_mode == "nonlinear":
        return beta[1:3].copy()
    return np.array([beta[0] - beta[2], beta[1] - beta[3]])
