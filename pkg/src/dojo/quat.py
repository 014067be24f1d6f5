"""Quaternion algebra for unit quaternions stored scalar-first as ``(s, v1, v2, v3)``.

The public functions operate on numpy arrays and validate their inputs.  The
``*_j`` variants at the bottom of the module are unchecked and traceable by
JAX; the residual assembly uses them.
"""
from __future__ import annotations

import jax.numpy as jnp
import numpy as np

UNIT_TOL = 1e-9

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# H = [0; I3], maps a tangent 3-vector into the vector part of a quaternion
HMAT = np.vstack([np.zeros((1, 3)), np.eye(3)])


class QuaternionError(ValueError):
    """Raised for non-unit inputs or arguments outside a map's domain."""


def _as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise QuaternionError(f"quaternion must have shape (4,), got {q.shape}")
    return q


def check_unit(q, tol: float = UNIT_TOL) -> np.ndarray:
    q = _as_quat(q)
    if abs(q @ q - 1.0) > tol:
        raise QuaternionError(f"quaternion is not unit (|q|^2 = {q @ q!r})")
    return q


def normalize(q) -> np.ndarray:
    q = _as_quat(q)
    return q / np.sqrt(q @ q)


def skew(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([
        [0.0, -x[2], x[1]],
        [x[2], 0.0, -x[0]],
        [-x[1], x[0], 0.0],
    ])


def lmat(q) -> np.ndarray:
    """Left-multiplication matrix: ``lmat(qa) @ qb == qa * qb``."""
    q = _as_quat(q)
    s, v = q[0], q[1:]
    out = np.empty((4, 4))
    out[0, 0] = s
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = s * np.eye(3) + skew(v)
    return out


def rmat(q) -> np.ndarray:
    """Right-multiplication matrix: ``rmat(qb) @ qa == qa * qb``."""
    q = _as_quat(q)
    s, v = q[0], q[1:]
    out = np.empty((4, 4))
    out[0, 0] = s
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = s * np.eye(3) - skew(v)
    return out


def vmat() -> np.ndarray:
    return HMAT.T.copy()


def tmat() -> np.ndarray:
    return np.diag([1.0, -1.0, -1.0, -1.0])


def conj(q) -> np.ndarray:
    return tmat() @ _as_quat(q)


def quat_mul(qa, qb) -> np.ndarray:
    qa = check_unit(qa)
    qb = check_unit(qb)
    return normalize(lmat(qa) @ qb)


def attitude_jacobian(q) -> np.ndarray:
    """Orthonormal 4x3 tangent basis at ``q``, ``lmat(q) @ H``."""
    return lmat(check_unit(q)) @ HMAT


def phi_map(d) -> np.ndarray:
    """Map a 3-vector with ``d.d < 1`` to the unit quaternion ``(sqrt(1 - d.d), d)``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (3,):
        raise QuaternionError(f"phi_map expects a 3-vector, got shape {d.shape}")
    n2 = d @ d
    if not n2 < 1.0:
        raise QuaternionError(f"phi_map domain violated: |d|^2 = {n2!r} >= 1")
    return np.concatenate([[np.sqrt(1.0 - n2)], d])


def rotation_matrix(q) -> np.ndarray:
    """Rotation matrix mapping body-frame vectors to the world frame."""
    q = _as_quat(q)
    return (lmat(q) @ rmat(q).T)[1:, 1:]


def rotate(q, x) -> np.ndarray:
    return rotation_matrix(q) @ np.asarray(x, dtype=float)


def from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def random_unit(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0 else -q


# --- traceable variants ---------------------------------------------------

def skew_j(x):
    z = jnp.zeros_like(x[0])
    return jnp.stack([
        jnp.stack([z, -x[2], x[1]]),
        jnp.stack([x[2], z, -x[0]]),
        jnp.stack([-x[1], x[0], z]),
    ])


def lmat_j(q):
    s, v = q[0], q[1:]
    top = jnp.concatenate([s[None], -v])
    bottom = jnp.concatenate([v[:, None], s * jnp.eye(3) + skew_j(v)], axis=1)
    return jnp.vstack([top[None, :], bottom])


def rmat_j(q):
    s, v = q[0], q[1:]
    top = jnp.concatenate([s[None], -v])
    bottom = jnp.concatenate([v[:, None], s * jnp.eye(3) - skew_j(v)], axis=1)
    return jnp.vstack([top[None, :], bottom])


def mul_j(qa, qb):
    sa, va = qa[0], qa[1:]
    sb, vb = qb[0], qb[1:]
    return jnp.concatenate([
        (sa * sb - va @ vb)[None],
        sa * vb + sb * va + jnp.cross(va, vb),
    ])


def conj_j(q):
    return q * jnp.array([1.0, -1.0, -1.0, -1.0])


def rotmat_j(q):
    s, v = q[0], q[1:]
    return (s * s - v @ v) * jnp.eye(3) + 2.0 * jnp.outer(v, v) + 2.0 * s * skew_j(v)


def rotate_j(q, x):
    return rotmat_j(q) @ x


def phi_j(d):
    return jnp.concatenate([jnp.sqrt(1.0 - d @ d)[None], d])
