"""Assembly of one time step as a cone-constrained NCP.

Decision variables (``a`` stored form): ``[p+ (3N), j (sum l), q+ (4N)]``.  The
tangent form used by Newton directions replaces ``q+`` with 3 entries per body.

Cone variables, orthant part first (per contact, in order), then SOC blocks:

* nonlinear contact:  ``b`` gets ``gamma`` and ``beta (SOC 3)``; ``c`` gets ``s`` and ``eta (SOC 3)``
* linearized contact: ``b`` gets ``[gamma, beta (4), psi]``; ``c`` gets ``[s, eta (4), sigma]``
* frictionless contact (``c_f = 0``): ``b`` gets ``gamma``; ``c`` gets ``s``.  A zero-friction
  cone has an empty interior, so no friction block is built.

``s`` is a slack equal to the gap at ``z+`` and ``sigma = c_f gamma - sum(beta)``.

Problem data ``theta``: ``[z- (7N), z (7N), u (6N), c_f (P), offsets (3P), m (N),
J (6N as xx, yy, zz, xy, xz, yz), h, g (3)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from . import quat
from .contact import geometry_j
from .dyn import momentum_in, momentum_out
from .ipsolver import ConeLayout, NcpProblem, ProblemFunctions, SolverPoint
from .linsolve import BlockStructure
from .mech import BodyConfig, Mechanism, joint_k
from .quat import conj_j, mul_j, phi_j, rotmat_j


@dataclass(frozen=True)
class NcpInfo:
    """Index bookkeeping shared by every problem with the same structure."""

    nbodies: int
    joint_offsets: tuple
    joint_dims: tuple
    contact_modes: tuple
    contact_orthant: tuple  # per contact: start of its orthant entries in b / c
    contact_soc: tuple  # per contact: start of its SOC block, or -1
    contact_rows: tuple  # per contact: first equality row
    n_eq: int
    layout: ConeLayout
    theta_slices: dict

    @property
    def n_joint(self) -> int:
        return sum(self.joint_dims)

    @property
    def n_euclid(self) -> int:
        return 3 * self.nbodies + self.n_joint

    @property
    def n_a(self) -> int:
        return self.n_euclid + 3 * self.nbodies

    def zplus_rows(self) -> np.ndarray:
        """Tangent rows of ``w`` holding ``z+``, ordered per body as ``(p, dq)``."""
        N, L = self.nbodies, self.n_joint
        rows = []
        for i in range(N):
            rows.extend(range(3 * i, 3 * i + 3))
            rows.extend(range(3 * N + L + 3 * i, 3 * N + L + 3 * i + 3))
        return np.array(rows, dtype=int)


def _inertia_from6(v):
    return jnp.array([[v[0], v[3], v[4]], [v[3], v[1], v[5]], [v[4], v[5], v[2]]])


def inertia_to6(J) -> np.ndarray:
    return np.array([J[0, 0], J[1, 1], J[2, 2], J[0, 1], J[0, 2], J[1, 2]])


ORTHANT_SIZE = {"nonlinear": 1, "linearized": 6, "frictionless": 1}
EQ_ROWS = {"nonlinear": 4, "linearized": 6, "frictionless": 1}


def contact_mode(spec) -> str:
    return "frictionless" if spec.friction == 0 else spec.cone_mode


def structure_key(mech: Mechanism):
    idx = {b.id: i for i, b in enumerate(mech.bodies)}
    joints = tuple(
        (j.kind, -1 if j.parent is None else idx[j.parent], idx[j.child],
         tuple(map(tuple, j.perp)), tuple(j.parent_anchor), tuple(j.child_anchor))
        for j in mech.joints)
    contacts = tuple(
        (idx[c.body], contact_mode(c), float(c.radius), tuple(c.surface_normal), float(c.surface_offset),
         None if c.sphere_center is None else tuple(c.sphere_center), float(c.sphere_radius))
        for c in mech.contacts)
    return (len(mech.bodies), joints, contacts)


def _info(key) -> NcpInfo:
    N, joints, contacts = key
    dims = tuple(len(joint_k(jk[0], np.zeros((2, 3)), np.zeros(3), np.zeros(3), np.zeros(3),
                             quat.IDENTITY, np.zeros(3), quat.IDENTITY)) for jk in joints)
    offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(dims)])[:-1]) if dims else ()
    modes = tuple(c[1] for c in contacts)
    orth, soc, rows = [], [], []
    o = 0
    for m in modes:
        orth.append(o)
        o += ORTHANT_SIZE[m]
    n_orth = o
    soc_dims = []
    s = n_orth
    row = 6 * N + sum(dims)
    for m in modes:
        rows.append(row)
        if m == "nonlinear":
            soc.append(s)
            s += 3
            soc_dims.append(3)
        else:
            soc.append(-1)
        row += EQ_ROWS[m]
    P = len(contacts)
    sl, start = {}, 0
    for name, size in (("z_prev", 7 * N), ("z", 7 * N), ("u", 6 * N), ("c_f", P), ("offsets", 3 * P),
                       ("m", N), ("J", 6 * N), ("h", 1), ("g", 3)):
        sl[name] = slice(start, start + size)
        start += size
    return NcpInfo(N, offsets, dims, modes, tuple(orth), tuple(soc), tuple(rows), row,
                   ConeLayout(n_orth, tuple(soc_dims)), sl)


def _make_fn(key, info: NcpInfo):
    N, joints, contacts = key
    L = info.n_joint
    sl = info.theta_slices
    layout = info.layout

    def fn(a, b, c, theta):
        p_next = a[: 3 * N].reshape(N, 3)
        jimp = a[3 * N: 3 * N + L]
        q_next = a[3 * N + L:].reshape(N, 4)
        z_prev = theta[sl["z_prev"]].reshape(N, 7)
        z = theta[sl["z"]].reshape(N, 7)
        u = theta[sl["u"]].reshape(N, 6)
        c_f = theta[sl["c_f"]]
        offs = theta[sl["offsets"]].reshape(-1, 3)
        m = theta[sl["m"]]
        Jv = theta[sl["J"]].reshape(N, 6)
        h = theta[sl["h"]][0]
        g = theta[sl["g"]]
        p_prev, q_prev = z_prev[:, :3], z_prev[:, 3:]
        p, q = z[:, :3], z[:, 3:]

        lin = jnp.zeros((N, 3))
        rot = jnp.zeros((N, 3))
        rows_j = []
        ident = jnp.array([1.0, 0.0, 0.0, 0.0])
        for k, (kind, ia, ib, perp, ra, rb) in enumerate(joints):
            perp = jnp.asarray(perp)
            ra, rb = jnp.asarray(ra), jnp.asarray(rb)
            pa0 = jnp.zeros(3) if ia < 0 else p[ia]
            qa0 = ident if ia < 0 else q[ia]
            pa1 = jnp.zeros(3) if ia < 0 else p_next[ia]
            qa1 = ident if ia < 0 else q_next[ia]
            rows_j.append(joint_k(kind, perp, ra, rb, pa1, qa1, p_next[ib], q_next[ib]))
            l = info.joint_dims[k]
            if l == 0:
                continue
            jk = jimp[info.joint_offsets[k]: info.joint_offsets[k] + l]

            def k_tan(dx, kind=kind, perp=perp, ra=ra, rb=rb, pa0=pa0, qa0=qa0, ib=ib):
                return joint_k(kind, perp, ra, rb, pa0 + dx[0:3], mul_j(qa0, phi_j(dx[3:6])),
                               p[ib] + dx[6:9], mul_j(q[ib], phi_j(dx[9:12])))

            _, vjp = jax.vjp(k_tan, jnp.zeros(12))
            gk = vjp(jk)[0]
            if ia >= 0:
                lin = lin.at[ia].add(gk[0:3])
                rot = rot.at[ia].add(0.25 * h * gk[3:6])
            lin = lin.at[ib].add(gk[6:9])
            rot = rot.at[ib].add(0.25 * h * gk[9:12])

        rows_c = []
        for k, (ib, mode, radius, normal, surf_off, center, s_rad) in enumerate(contacts):
            static = (radius, normal, surf_off, center, s_rad)
            phi, v, n, t1, t2, lever = geometry_j(static, offs[k], p[ib], q[ib], p_next[ib], q_next[ib], h)
            o = info.contact_orthant[k]
            gamma, s = b[o], c[o]
            if mode == "nonlinear":
                so = info.contact_soc[k]
                beta, eta = b[so: so + 3], c[so: so + 3]
                fr = beta[1:3]
                rows_c.append(jnp.concatenate([jnp.stack([s - phi]), v - eta[1:3],
                                               jnp.stack([beta[0] - c_f[k] * gamma])]))
            elif mode == "frictionless":
                fr = jnp.zeros(2)
                rows_c.append(jnp.stack([s - phi]))
            else:
                beta, psi = b[o + 1: o + 5], b[o + 5]
                eta, sigma = c[o + 1: o + 5], c[o + 5]
                fr = jnp.stack([beta[0] - beta[2], beta[1] - beta[3]])
                rows_c.append(jnp.concatenate([jnp.stack([s - phi]), jnp.concatenate([v, -v]) + psi - eta,
                                               jnp.stack([sigma - (c_f[k] * gamma - jnp.sum(beta))])]))
            lam = gamma * n + fr[0] * t1 + fr[1] * t2
            lin = lin.at[ib].add(lam)
            rot = rot.at[ib].add(0.5 * h * (rotmat_j(q[ib]).T @ jnp.cross(lever, lam)))

        rows_b = []
        for i in range(N):
            J = _inertia_from6(Jv[i])
            lin_r = m[i] * (p_next[i] - 2.0 * p[i] + p_prev[i]) / h - h * m[i] * g - lin[i] - h * u[i, :3]
            psi = mul_j(conj_j(q_prev[i]), q[i])[1:]
            psi_next = mul_j(conj_j(q[i]), q_next[i])[1:]
            rot_r = momentum_out(J, psi_next) - momentum_in(J, psi) - rot[i] - 0.5 * h * h * u[i, 3:]
            rows_b.append(jnp.concatenate([lin_r, rot_r]))
        return jnp.concatenate(rows_b + rows_j + rows_c)

    return fn


@lru_cache(maxsize=64)
def _compiled(key):
    info = _info(key)
    return info, ProblemFunctions.from_fn(_make_fn(key, info)), _blocks(key, info)


def _blocks(key, info: NcpInfo):
    """Row/column blocks per graph node for the structured solve, or ``None`` for loops."""
    N, joints, contacts = key
    # rebuild the tree over (body, joint, contact) nodes from the static key
    from .mech import Body, ContactSpec, Joint, build_mechanism

    bodies = [Body(i, 1.0) for i in range(N)]
    js = [Joint(k, jk[0], None if jk[1] < 0 else jk[1], jk[2]) for k, jk in enumerate(joints)]
    cs = [ContactSpec(k, ck[0]) for k, ck in enumerate(contacts)]
    mech = build_mechanism(bodies, js, cs)
    if mech.has_loops:
        return None
    L = info.n_joint
    na, nk, ne = info.n_a, info.layout.size, info.n_eq
    rows, cols = {}, {}
    for i in range(N):
        rows[("body", i)] = np.arange(6 * i, 6 * i + 6)
        cols[("body", i)] = np.concatenate([np.arange(3 * i, 3 * i + 3),
                                            np.arange(3 * N + L + 3 * i, 3 * N + L + 3 * i + 3)])
    for k in range(len(joints)):
        o, l = info.joint_offsets[k], info.joint_dims[k]
        rows[("joint", k)] = np.arange(6 * N + o, 6 * N + o + l)
        cols[("joint", k)] = np.arange(3 * N + o, 3 * N + o + l)
    for k, mode in enumerate(info.contact_modes):
        o = info.contact_orthant[k]
        cone = list(range(o, o + ORTHANT_SIZE[mode]))
        if mode == "nonlinear":
            so = info.contact_soc[k]
            cone += list(range(so, so + 3))
        cone = np.array(cone)
        r0 = info.contact_rows[k]
        neq = EQ_ROWS[mode]
        rows[("contact", k)] = np.concatenate([np.arange(r0, r0 + neq), ne + cone])
        cols[("contact", k)] = np.concatenate([na + cone, na + nk + cone])
    order = [nd for nd in mech.elimination_order if rows[nd].size]

    def parent_of(nd):
        par = mech.elimination_parent.get(nd)
        while par is not None and rows[par].size == 0:
            par = mech.elimination_parent.get(par)
        return par

    pos = {nd: i for i, nd in enumerate(order)}
    return BlockStructure(
        rows=tuple(rows[nd] for nd in order),
        cols=tuple(cols[nd] for nd in order),
        parent=tuple(-1 if parent_of(nd) is None else pos[parent_of(nd)] for nd in order),
        order=tuple(range(len(order))),
    )


def _state_vec(configs) -> np.ndarray:
    return np.concatenate([np.concatenate([x.p, x.q]) for x in configs]) if configs else np.zeros(0)


def pack_theta(mech: Mechanism, z_prev, z, u=None) -> np.ndarray:
    N = mech.nbodies
    if len(z_prev) != N or len(z) != N:
        raise ValueError(f"expected {N} body configurations per state")
    u = np.zeros(6 * N) if u is None else np.asarray(u, dtype=float).reshape(-1)
    if u.size != 6 * N:
        raise ValueError(f"input vector must have {6 * N} entries (f, tau per body)")
    return np.concatenate([
        _state_vec(z_prev), _state_vec(z), u,
        np.array([c.friction for c in mech.contacts]),
        np.concatenate([c.offset for c in mech.contacts]) if mech.contacts else np.zeros(0),
        np.array([b.mass for b in mech.bodies]),
        np.concatenate([inertia_to6(b.inertia) for b in mech.bodies]),
        [mech.timestep], mech.gravity,
    ])


def assemble_ncp(mech: Mechanism, z_prev, z, u=None) -> NcpProblem:
    """NCP whose solution ``w*`` contains the next configuration ``z+`` and all impulses."""
    info, fns, blocks = _compiled(structure_key(mech))
    theta = pack_theta(mech, z_prev, z, u)
    N = mech.nbodies
    tq = tuple(list(range(3, 7 * N, 7)) + list(range(7 * N + 3, 14 * N, 7)))
    return NcpProblem(info.n_euclid, N, info.layout, theta, fns, tq, blocks, info)


def initial_point(problem: NcpProblem, warm: SolverPoint | None = None) -> SolverPoint:
    """Constant-velocity extrapolation with unit cone variables, or a warm start."""
    info: NcpInfo = problem.info
    N, L = info.nbodies, info.n_joint
    th = problem.theta
    z_prev = th[info.theta_slices["z_prev"]].reshape(N, 7)
    z = th[info.theta_slices["z"]].reshape(N, 7)
    a = np.zeros(info.n_euclid + 4 * N)
    for i in range(N):
        a[3 * i: 3 * i + 3] = 2.0 * z[i, :3] - z_prev[i, :3]
        rel = quat.lmat(quat.conj(z_prev[i, 3:])) @ z[i, 3:]
        qn = quat.lmat(z[i, 3:]) @ rel
        a[3 * N + L + 4 * i: 3 * N + L + 4 * i + 4] = qn / np.linalg.norm(qn)
    e = problem.layout.identity()
    if warm is not None:
        a[3 * N: 3 * N + L] = warm.a[3 * N: 3 * N + L]
        return SolverPoint(a, warm.b.copy(), warm.c.copy())
    return _consistent_cones(problem, SolverPoint(a, e.copy(), e.copy()))


def _consistent_cones(problem: NcpProblem, w: SolverPoint, margin: float = 0.1) -> SolverPoint:
    """Choose cone variables that satisfy the contact equality rows at the initial ``a``.

    Gaps and contact velocities are read off the residual at ``w``; only the
    slack row of a penetrating contact stays violated after projection.
    """
    info: NcpInfo = problem.info
    if not info.contact_modes:
        return w
    E = problem.equality(w)
    b, c = w.b.copy(), w.c.copy()
    c_f = problem.theta[info.theta_slices["c_f"]]
    for k, mode in enumerate(info.contact_modes):
        r, o = info.contact_rows[k], info.contact_orthant[k]
        phi = c[o] - E[r]
        c[o] = max(phi, margin)
        gamma = b[o]
        if mode == "nonlinear":
            so = info.contact_soc[k]
            v = E[r + 1: r + 3] + c[so + 1: so + 3]
            c[so: so + 3] = np.concatenate([[np.linalg.norm(v) + 1.0], v])
            b[so: so + 3] = [max(c_f[k] * gamma, margin), 0.0, 0.0]
        elif mode == "linearized":
            v = E[r + 1: r + 3] + c[o + 1: o + 3] - b[o + 5]
            psi = np.max(np.abs(v)) + 1.0
            b[o + 5] = psi
            c[o + 1: o + 5] = np.concatenate([v, -v]) + psi
            beta = max(c_f[k] * gamma, margin) / 8.0
            b[o + 1: o + 5] = beta
            c[o + 5] = max(c_f[k] * gamma - 4.0 * beta, margin)
    return SolverPoint(w.a, b, c)


def next_configs(problem: NcpProblem, w: SolverPoint):
    info: NcpInfo = problem.info
    N, L = info.nbodies, info.n_joint
    out = []
    for i in range(N):
        q = w.a[3 * N + L + 4 * i: 3 * N + L + 4 * i + 4]
        out.append(BodyConfig(w.a[3 * i: 3 * i + 3].copy(), q / np.linalg.norm(q)))
    return out


@dataclass(frozen=True)
class ContactImpulse:
    gamma: float
    friction: np.ndarray  # (t1, t2) components
    slack: float  # gap at z+


def contact_impulses(problem: NcpProblem, w: SolverPoint) -> list:
    info: NcpInfo = problem.info
    out = []
    for k, mode in enumerate(info.contact_modes):
        o = info.contact_orthant[k]
        if mode == "nonlinear":
            so = info.contact_soc[k]
            fr = w.b[so + 1: so + 3].copy()
        elif mode == "frictionless":
            fr = np.zeros(2)
        else:
            beta = w.b[o + 1: o + 5]
            fr = np.array([beta[0] - beta[2], beta[1] - beta[3]])
        out.append(ContactImpulse(float(w.b[o]), fr, float(w.c[o])))
    return out


def joint_impulses(problem: NcpProblem, w: SolverPoint) -> np.ndarray:
    info: NcpInfo = problem.info
    N = info.nbodies
    return w.a[3 * N: 3 * N + info.n_joint].copy()
