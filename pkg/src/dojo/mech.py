"""Maximal-coordinates mechanism description: bodies, joints, contacts and their graph."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import quat
from .quat import conj_j, mul_j, phi_j, rotmat_j

JOINT_DIMS = {"revolute": 5, "spherical": 3, "prismatic": 5, "fixed": 6, "floating": 0}
WORLD = None


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class Body:
    id: int
    mass: float
    inertia: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "inertia", J)
        if not self.mass > 0:
            raise MechanismError(f"body {self.id}: mass must be positive")
        if np.max(np.abs(J - J.T)) > 1e-12:
            raise MechanismError(f"body {self.id}: inertia is not symmetric")
        if np.min(np.linalg.eigvalsh(J)) <= 0:
            raise MechanismError(f"body {self.id}: inertia is not positive definite")


@dataclass(frozen=True)
class BodyConfig:
    p: np.ndarray
    q: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "q", quat.check_unit(self.q, 1e-8))


WORLD_CONFIG = BodyConfig(np.zeros(3), quat.IDENTITY)


def _perp_basis(axis: np.ndarray) -> np.ndarray:
    """Two unit vectors spanning the plane orthogonal to ``axis`` (rows)."""
    a = axis / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u1 = ref - (ref @ a) * a
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(a, u1)
    return np.vstack([u1, u2])


@dataclass(frozen=True)
class Joint:
    id: int
    kind: str
    parent: Optional[int]
    child: int
    parent_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    child_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if self.kind not in JOINT_DIMS:
            raise MechanismError(f"joint {self.id}: unknown kind {self.kind!r}")
        for name in ("parent_anchor", "child_anchor", "axis"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        n = np.linalg.norm(self.axis)
        if n == 0:
            raise MechanismError(f"joint {self.id}: zero axis")
        object.__setattr__(self, "axis", self.axis / n)

    @property
    def dim(self) -> int:
        return JOINT_DIMS[self.kind]

    @property
    def perp(self) -> np.ndarray:
        return _perp_basis(self.axis)


@dataclass(frozen=True)
class ContactSpec:
    """A contact point (or sphere) on a body against a static halfspace or sphere."""

    id: int
    body: int
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    friction: float = 0.5
    surface_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    surface_offset: float = 0.0
    cone_mode: str = "nonlinear"
    sphere_center: Optional[np.ndarray] = None
    sphere_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        n = np.asarray(self.surface_normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise MechanismError(f"contact {self.id}: surface normal must be unit")
        object.__setattr__(self, "surface_normal", n)
        if self.friction < 0:
            raise MechanismError(f"contact {self.id}: negative friction coefficient")
        if self.radius < 0:
            raise MechanismError(f"contact {self.id}: negative radius")
        if self.cone_mode not in ("nonlinear", "linearized"):
            raise MechanismError(f"contact {self.id}: unknown cone mode {self.cone_mode!r}")
        if self.sphere_center is not None:
            object.__setattr__(self, "sphere_center", np.asarray(self.sphere_center, dtype=float).reshape(3))


@dataclass(frozen=True)
class Mechanism:
    bodies: tuple
    joints: tuple
    contacts: tuple
    gravity: np.ndarray
    timestep: float
    elimination_order: tuple  # of (kind, index) node keys
    elimination_parent: dict
    has_loops: bool

    @property
    def nbodies(self) -> int:
        return len(self.bodies)

    def body_index(self, body_id: int) -> int:
        for i, b in enumerate(self.bodies):
            if b.id == body_id:
                return i
        raise MechanismError(f"unknown body id {body_id}")

    @property
    def nodes(self) -> list:
        return ([("body", i) for i in range(len(self.bodies))]
                + [("joint", i) for i in range(len(self.joints))]
                + [("contact", i) for i in range(len(self.contacts))])

    def with_params(self, **changes) -> "Mechanism":
        return replace(self, **changes)

    def with_contacts(self, contacts: Sequence[ContactSpec]) -> "Mechanism":
        return replace(self, contacts=tuple(contacts))

    def with_timestep(self, h: float) -> "Mechanism":
        if not h > 0:
            raise MechanismError("timestep must be positive")
        return replace(self, timestep=float(h))


def _graph(bodies, joints, contacts):
    """Adjacency over node keys; the world is the key ``("world", 0)``."""
    index = {b.id: i for i, b in enumerate(bodies)}
    adj = {("world", 0): []}
    for i in range(len(bodies)):
        adj[("body", i)] = []
    for k, jt in enumerate(joints):
        node = ("joint", k)
        ends = [("world", 0) if jt.parent is WORLD else ("body", index[jt.parent]), ("body", index[jt.child])]
        adj[node] = list(ends)
        for e in ends:
            adj[e].append(node)
    for k, ct in enumerate(contacts):
        node = ("contact", k)
        adj[node] = [("body", index[ct.body])]
        adj[("body", index[ct.body])].append(node)
    return adj


def _has_cycle(bodies, joints) -> bool:
    index = {b.id: i + 1 for i, b in enumerate(bodies)}
    parent = list(range(len(bodies) + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for jt in joints:
        a = 0 if jt.parent is WORLD else index[jt.parent]
        b = index[jt.child]
        ra, rb = find(a), find(b)
        if ra == rb:
            return True
        parent[ra] = rb
    return False


def _elimination(bodies, joints, contacts):
    """Leaves-to-root elimination order and parent map for tree-structured graphs."""
    adj = _graph(bodies, joints, contacts)
    seen = {("world", 0)}
    order, parent = [], {}
    roots = [("world", 0)] + [("body", i) for i in range(len(bodies))]
    for root in roots:
        if root in seen and root != ("world", 0):
            continue
        seen.add(root)
        bfs = []
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    parent[nb] = None if node == ("world", 0) else node
                    bfs.append(nb)
                    queue.append(nb)
        if root != ("world", 0):
            parent[root] = None
            bfs.insert(0, root)
        order.extend(reversed(bfs))
    return tuple(order), parent


def build_mechanism(bodies, joints=(), contacts=(), gravity=(0.0, 0.0, -9.81), timestep=0.01) -> Mechanism:
    bodies, joints, contacts = tuple(bodies), tuple(joints), tuple(contacts)
    if not timestep > 0:
        raise MechanismError("timestep must be positive")
    for kind, items in (("body", bodies), ("joint", joints), ("contact", contacts)):
        ids = [x.id for x in items]
        if len(set(ids)) != len(ids):
            raise MechanismError(f"duplicate {kind} id")
    body_ids = {b.id for b in bodies}
    for jt in joints:
        if jt.child not in body_ids or (jt.parent is not WORLD and jt.parent not in body_ids):
            raise MechanismError(f"joint {jt.id} references a missing body")
        if jt.parent == jt.child:
            raise MechanismError(f"joint {jt.id} connects a body to itself")
    for ct in contacts:
        if ct.body not in body_ids:
            raise MechanismError(f"contact {ct.id} references a missing body")
    loops = _has_cycle(bodies, joints)
    if loops:
        order = tuple([("body", i) for i in range(len(bodies))]
                      + [("joint", i) for i in range(len(joints))]
                      + [("contact", i) for i in range(len(contacts))])
        parents = {}
    else:
        order, parents = _elimination(bodies, joints, contacts)
    return Mechanism(bodies, joints, contacts, np.asarray(gravity, dtype=float).reshape(3),
                     float(timestep), order, parents, loops)


# --- joint constraints ----------------------------------------------------

def joint_k(kind, perp, ra, rb, pa, qa, pb, qb):
    """Traceable joint residual with all geometry passed explicitly."""
    anchor = rotmat_j(qa).T @ (pb + rotmat_j(qb) @ rb - pa) - ra
    vrel = mul_j(conj_j(qa), qb)[1:]
    if kind == "spherical":
        return anchor
    if kind == "revolute":
        return jnp.concatenate([anchor, perp @ vrel])
    if kind == "prismatic":
        return jnp.concatenate([vrel, perp @ anchor])
    if kind == "fixed":
        return jnp.concatenate([anchor, vrel])
    return jnp.zeros(0)


def joint_residual(joint: Joint, xa: BodyConfig, xb: BodyConfig) -> np.ndarray:
    """Constraint violation ``k(xa, xb)``; pass ``WORLD_CONFIG`` for world-attached joints."""
    return np.asarray(joint_k(joint.kind, joint.perp, joint.parent_anchor, joint.child_anchor,
                              xa.p, xa.q, xb.p, xb.q))


@lru_cache(maxsize=None)
def _joint_jac_fn(kind):
    def k_tangent(dx, perp, ra, rb, pa, qa, pb, qb):
        return joint_k(kind, perp, ra, rb, pa + dx[0:3], mul_j(qa, phi_j(dx[3:6])),
                       pb + dx[6:9], mul_j(qb, phi_j(dx[9:12])))
    return jax.jit(jax.jacfwd(k_tangent))


def joint_jacobian(joint: Joint, xa: BodyConfig, xb: BodyConfig) -> np.ndarray:
    """Tangent-space Jacobian ``dk/d(pa, dqa, pb, dqb)``, shape ``(l, 12)``."""
    if joint.dim == 0:
        return np.zeros((0, 12))
    fn = _joint_jac_fn(joint.kind)
    return np.asarray(fn(np.zeros(12), joint.perp, joint.parent_anchor, joint.child_anchor,
                         xa.p, xa.q, xb.p, xb.q))


# --- JSON description -----------------------------------------------------

def mechanism_to_dict(mech: Mechanism) -> dict:
    return {
        "bodies": [{"id": b.id, "mass": b.mass, "inertia": b.inertia.tolist()} for b in mech.bodies],
        "joints": [{"id": j.id, "kind": j.kind, "parent": j.parent, "child": j.child,
                    "parent_anchor": j.parent_anchor.tolist(), "child_anchor": j.child_anchor.tolist(),
                    "axis": j.axis.tolist()} for j in mech.joints],
        "contacts": [{"id": c.id, "body": c.body, "offset": c.offset.tolist(), "radius": c.radius,
                      "friction": c.friction, "surface_normal": c.surface_normal.tolist(),
                      "surface_offset": c.surface_offset, "cone_mode": c.cone_mode,
                      **({"sphere_center": c.sphere_center.tolist(), "sphere_radius": c.sphere_radius}
                         if c.sphere_center is not None else {})}
                     for c in mech.contacts],
        "gravity": mech.gravity.tolist(),
        "timestep": mech.timestep,
    }


def mechanism_from_dict(doc: dict) -> Mechanism:
    from .config import MechanismFile

    spec = MechanismFile.model_validate(doc)
    bodies = [Body(b.id, b.mass, np.asarray(b.inertia)) for b in spec.bodies]
    joints = [Joint(j.id, j.kind, j.parent, j.child, j.parent_anchor, j.child_anchor, j.axis)
              for j in spec.joints]
    contacts = [ContactSpec(c.id, c.body, c.offset, c.radius, c.friction, c.surface_normal,
                            c.surface_offset, c.cone_mode, c.sphere_center, c.sphere_radius)
                for c in spec.contacts]
    return build_mechanism(bodies, joints, contacts, spec.gravity, spec.timestep)


def load_mechanism(path) -> Mechanism:
    return mechanism_from_dict(json.loads(Path(path).read_text()))


def save_mechanism(mech: Mechanism, path) -> None:
    Path(path).write_text(json.dumps(mechanism_to_dict(mech), indent=2))
