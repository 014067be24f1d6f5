"""Variational-integrator residuals for a single rigid body.

Units: the linear residual is an impulse balance (N s); the rotational residual is
``h/2`` times the body-frame angular-impulse balance, which is why an applied
torque enters as ``h**2 * tau / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from . import quat
from .quat import QuaternionError


@dataclass(frozen=True)
class BodyInput:
    f: np.ndarray  # world frame, N
    tau: np.ndarray  # body frame, N m

    def __post_init__(self):
        for name in ("f", "tau"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite {name}")
            object.__setattr__(self, name, v)


def _check_psi(psi, name="psi") -> np.ndarray:
    psi = np.asarray(psi, dtype=float).reshape(3)
    if not psi @ psi < 1.0:
        raise QuaternionError(f"{name} outside the unit ball (|{name}|^2 = {psi @ psi!r})")
    return psi


def linear_residual(body, p_prev, p, p_next, g, h, impulse, f) -> np.ndarray:
    m = body.mass
    p_prev, p, p_next, g, impulse, f = (np.asarray(x, dtype=float) for x in (p_prev, p, p_next, g, impulse, f))
    return m * (p_next - 2.0 * p + p_prev) / h - h * m * g - impulse - h * f


def momentum_out(J, psi):
    """``sqrt(1 - psi.psi) J psi + psi x J psi``: outgoing term of the rotational residual."""
    Jpsi = J @ psi
    return jnp.sqrt(1.0 - psi @ psi) * Jpsi + jnp.cross(psi, Jpsi)


def momentum_in(J, psi):
    """``sqrt(1 - psi.psi) J psi - psi x J psi``: incoming term, expressed in the current frame."""
    Jpsi = J @ psi
    return jnp.sqrt(1.0 - psi @ psi) * Jpsi - jnp.cross(psi, Jpsi)


def rotational_residual(body, psi, psi_next, q=None, impulse=np.zeros(3), tau=np.zeros(3), h=0.01) -> np.ndarray:
    """Discrete Euler equation in the body frame of the current orientation ``q``."""
    psi = _check_psi(psi)
    psi_next = _check_psi(psi_next, "psi_next")
    J = body.inertia
    out = np.asarray(momentum_out(J, psi_next)) - np.asarray(momentum_in(J, psi))
    return out - np.asarray(impulse, dtype=float) - h * h * np.asarray(tau, dtype=float) / 2.0


def recover_q_plus(q, psi_next) -> np.ndarray:
    psi_next = _check_psi(psi_next, "psi_next")
    return quat.quat_mul(q, quat.phi_map(psi_next))


def psi_from_configs(q, q_next) -> np.ndarray:
    rel = quat.lmat(quat.conj(quat.check_unit(q))) @ quat.check_unit(q_next)
    if rel[0] <= 0.0:
        raise QuaternionError("relative rotation between consecutive steps reaches 180 degrees; "
                              "reduce the time step")
    return rel[1:].copy()


# --- diagnostics ----------------------------------------------------------

def body_momentum(body, x, x_next, h):
    """Discrete linear and angular momentum (world frame) carried over the interval [x, x_next].

    The angular part is the exact momentum map of the integrator, so it is
    conserved to solver precision for free-floating systems.
    """
    v = (x_next.p - x.p) / h
    lin = body.mass * v
    psi = psi_from_configs(x.q, x_next.q)
    spin = (2.0 / h) * np.asarray(momentum_out(body.inertia, psi))
    ang = quat.rotate(x.q, spin) + np.cross(x.p, lin)
    return lin, ang


def body_energy(body, x, x_next, h, g) -> float:
    """Kinetic plus gravitational potential energy using ``omega = (2/h) psi``; diagnostic only."""
    v = (x_next.p - x.p) / h
    omega = (2.0 / h) * psi_from_configs(x.q, x_next.q)
    kinetic = 0.5 * body.mass * v @ v + 0.5 * omega @ body.inertia @ omega
    return float(kinetic - body.mass * np.asarray(g) @ x_next.p)
