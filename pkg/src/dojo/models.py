"""Ready-made mechanisms used by the experiments and tests."""
from __future__ import annotations

import numpy as np

from .mech import Body, ContactSpec, Joint, build_mechanism


def box_inertia(mass: float, half_extents) -> np.ndarray:
    a, b, c = (2.0 * np.asarray(half_extents, dtype=float))
    return mass / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])


def box_vertices(half_extents) -> np.ndarray:
    hx, hy, hz = half_extents
    return np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])


def box(half_extents=(0.1, 0.1, 0.1), mass=1.0, friction=0.5, cone_mode="nonlinear", vertices=None,
        gravity=(0.0, 0.0, -9.81), timestep=0.01):
    """Box with a point contact at each of its 8 vertices against the floor ``z = 0``."""
    verts = box_vertices(half_extents) if vertices is None else np.asarray(vertices, dtype=float)
    contacts = [ContactSpec(k, 0, v, 0.0, friction, cone_mode=cone_mode) for k, v in enumerate(verts)]
    body = Body(0, mass, box_inertia(mass, half_extents))
    return build_mechanism([body], [], contacts, gravity, timestep)


def sphere(radius=0.5, mass=1.0, friction=0.5, cone_mode="nonlinear", gravity=(0.0, 0.0, -9.81), timestep=0.01):
    inertia = 0.4 * mass * radius ** 2 * np.eye(3)
    contact = ContactSpec(0, 0, np.zeros(3), radius, friction, cone_mode=cone_mode)
    return build_mechanism([Body(0, mass, inertia)], [], [contact], gravity, timestep)


def free_body(mass=1.0, inertia=(0.1, 0.2, 0.3), gravity=(0.0, 0.0, -9.81), timestep=0.01):
    return build_mechanism([Body(0, mass, np.diag(inertia))], [], [], gravity, timestep)


def chain(n_links=3, link_length=1.0, mass=1.0, kind="spherical", gravity=(0.0, 0.0, 0.0), timestep=0.01,
          contacts=(), friction=0.5, cone_mode="nonlinear", radius=0.05):
    """Links along x joined end to end; no world joint, so the chain floats.

    ``contacts`` lists link indices that get a sphere contact of ``radius`` at
    their outer tip against the floor.
    """
    half = 0.5 * link_length
    r = radius
    inertia = np.diag([0.5 * mass * r * r, mass * (3 * r * r + link_length ** 2) / 12.0,
                       mass * (3 * r * r + link_length ** 2) / 12.0])
    bodies = [Body(i, mass, inertia) for i in range(n_links)]
    axes = [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0)]
    joints = [Joint(i, kind, i, i + 1, (half, 0.0, 0.0), (-half, 0.0, 0.0), axes[i % 2])
              for i in range(n_links - 1)]
    cs = []
    for k, link in enumerate(contacts):
        tip = (half, 0.0, 0.0) if link == n_links - 1 else (-half, 0.0, 0.0)
        cs.append(ContactSpec(k, link, tip, radius, friction, cone_mode=cone_mode))
    return build_mechanism(bodies, joints, cs, gravity, timestep)


def chain_configs(n_links=3, link_length=1.0, height=0.0):
    from .mech import BodyConfig

    return [BodyConfig([i * link_length, 0.0, height]) for i in range(n_links)]
