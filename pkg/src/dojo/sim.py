"""Time stepping, state handling and per-step diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import quat
from .contact import signed_distance
from .dyn import body_energy, body_momentum
from .ipsolver import SolveResult, SolverOptions, SolverPoint, solve
from .mech import BodyConfig, Mechanism
from .ncp import ContactImpulse, assemble_ncp, contact_impulses, initial_point, joint_impulses, next_configs


class SolverFailure(RuntimeError):
    def __init__(self, message, status=None, result=None, step_index=None):
        super().__init__(message)
        self.status = status
        self.result = result
        self.step_index = step_index


@dataclass(frozen=True)
class SimState:
    z_prev: tuple
    z_curr: tuple

    def __post_init__(self):
        object.__setattr__(self, "z_prev", tuple(self.z_prev))
        object.__setattr__(self, "z_curr", tuple(self.z_curr))
        if len(self.z_prev) != len(self.z_curr):
            raise ValueError("z_prev and z_curr have different body counts")


@dataclass(frozen=True)
class SimOptions:
    solver: SolverOptions = SolverOptions()
    warm_start: bool = True
    kappa_grad: float = 3e-4


@dataclass
class StepResult:
    z_next: list
    contacts: list
    joint_impulses: np.ndarray
    solve: SolveResult
    problem: object

    @property
    def w(self) -> SolverPoint:
        return self.solve.w


def _check_state(mech: Mechanism, state: SimState):
    if len(state.z_curr) != mech.nbodies:
        raise ValueError(f"state has {len(state.z_curr)} bodies, mechanism has {mech.nbodies}")


def step(mech: Mechanism, state: SimState, u=None, opts: SimOptions = SimOptions(), want_gradients: bool = False,
         warm: Optional[SolverPoint] = None):
    """Advance one time step: returns ``(next_state, StepResult, StepJacobians or None)``."""
    _check_state(mech, state)
    problem = assemble_ncp(mech, state.z_prev, state.z_curr, u)
    w0 = initial_point(problem, warm if opts.warm_start else None)
    result = solve(problem, w0, opts.solver, kappa_cache=opts.kappa_grad if want_gradients else None)
    if not result.converged:
        raise SolverFailure(f"solver did not converge ({result.status}, r_vio={result.r_vio:.3e}, "
                            f"kappa_vio={result.kappa_vio:.3e})", result.status, result)
    z_next = next_configs(problem, result.w)
    out = StepResult(z_next, contact_impulses(problem, result.w), joint_impulses(problem, result.w), result, problem)
    jac = None
    if want_gradients:
        from .diff import implicit_step_gradients

        jac = implicit_step_gradients(problem, result, opts.kappa_grad)
    return SimState(state.z_curr, z_next), out, jac


def init_from_velocity(mech: Mechanism, configs, linear_vels=None, angular_vels=None) -> SimState:
    """State whose finite-difference velocities equal the requested ones.

    Angular velocities are body-frame; the back-out uses ``q- = q * conj(phi(h w / 2))``.
    """
    h = mech.timestep
    n = len(configs)
    lv = np.zeros((n, 3)) if linear_vels is None else np.asarray(linear_vels, dtype=float).reshape(n, 3)
    av = np.zeros((n, 3)) if angular_vels is None else np.asarray(angular_vels, dtype=float).reshape(n, 3)
    prev = []
    for x, v, w in zip(configs, lv, av):
        d = 0.5 * h * w
        if not d @ d < 1.0:
            raise quat.QuaternionError("angular velocity too large for the time step")
        q_prev = quat.quat_mul(x.q, quat.conj(quat.phi_map(d)))
        prev.append(BodyConfig(x.p - h * v, q_prev))
    return SimState(prev, configs)


def velocities(mech: Mechanism, state: SimState):
    """Finite-difference linear (world) and angular (body) velocities of ``state``."""
    from .dyn import psi_from_configs

    h = mech.timestep
    lin = np.array([(b.p - a.p) / h for a, b in zip(state.z_prev, state.z_curr)])
    ang = np.array([2.0 / h * psi_from_configs(a.q, b.q) for a, b in zip(state.z_prev, state.z_curr)])
    return lin, ang


@dataclass(frozen=True)
class StepDiagnostics:
    energy: float
    linear_momentum: np.ndarray
    angular_momentum: np.ndarray
    min_phi: float
    iterations: int


def diagnostics(mech: Mechanism, z, z_next, iterations: int = 0) -> StepDiagnostics:
    """Energy and momentum carried over ``[z, z+]`` plus the smallest gap at ``z+``."""
    h, g = mech.timestep, mech.gravity
    energy, lin, ang = 0.0, np.zeros(3), np.zeros(3)
    for body, x, xn in zip(mech.bodies, z, z_next):
        energy += body_energy(body, x, xn, h, g)
        l, a = body_momentum(body, x, xn, h)
        lin += l
        ang += a
    index = {b.id: i for i, b in enumerate(mech.bodies)}
    phis = [signed_distance(c, z_next[index[c.body]]) for c in mech.contacts]
    return StepDiagnostics(float(energy), lin, ang, float(min(phis)) if phis else np.inf, iterations)


@dataclass
class Trajectory:
    mechanism: Mechanism
    states: list = field(default_factory=list)
    impulses: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def h(self) -> float:
        return self.mechanism.timestep

    def energy(self) -> np.ndarray:
        return np.array([d.energy for d in self.diagnostics])

    def linear_momentum(self) -> np.ndarray:
        return np.array([d.linear_momentum for d in self.diagnostics])

    def angular_momentum(self) -> np.ndarray:
        return np.array([d.angular_momentum for d in self.diagnostics])

    def min_phi(self) -> np.ndarray:
        return np.array([d.min_phi for d in self.diagnostics])

    def positions(self, body: int = 0) -> np.ndarray:
        return np.array([s.z_curr[body].p for s in self.states])

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


def simulate(mech: Mechanism, initial: SimState, controller: Optional[Callable] = None, T: int = 1,
             opts: SimOptions = SimOptions()) -> Trajectory:
    """Run ``T`` steps; ``states[k]`` holds ``(z_k, z_k+1)`` after step ``k``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    _check_state(mech, initial)
    traj = Trajectory(mech)
    state, warm = initial, None
    for k in range(T):
        u = None if controller is None else controller(k)
        try:
            nxt, res, _ = step(mech, state, u, opts, warm=warm)
        except SolverFailure as err:
            err.step_index = k
            raise SolverFailure(f"step {k}: {err}", err.status, err.result, k) from err
        traj.states.append(nxt)
        traj.impulses.append(res.contacts)
        traj.controls.append(None if u is None else np.asarray(u, dtype=float))
        traj.diagnostics.append(diagnostics(mech, state.z_curr, nxt.z_curr, res.solve.iterations))
        state, warm = nxt, res.w
    return traj


def _fmt(x) -> str:
    return "%.17g" % x


def write_trajectory_csv(traj: Trajectory, path) -> None:
    mech = traj.mechanism
    header = ["step", "time"]
    for b in mech.bodies:
        header += [f"body{b.id}_{c}" for c in ("px", "py", "pz", "qs", "qx", "qy", "qz")]
    for c in mech.contacts:
        header += [f"contact{c.id}_{n}" for n in ("gamma", "b1", "b2", "phi")]
    header += ["energy", "lin_x", "lin_y", "lin_z", "ang_x", "ang_y", "ang_z", "min_phi", "iterations"]
    index = {b.id: i for i, b in enumerate(mech.bodies)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, (st, imp, d) in enumerate(zip(traj.states, traj.impulses, traj.diagnostics)):
            row = [str(k + 1), _fmt((k + 1) * traj.h)]
            for x in st.z_curr:
                row += [_fmt(v) for v in np.concatenate([x.p, x.q])]
            for c, ci in zip(mech.contacts, imp):
                phi = signed_distance(c, st.z_curr[index[c.body]])
                row += [_fmt(ci.gamma), _fmt(ci.friction[0]), _fmt(ci.friction[1]), _fmt(phi)]
            row += [_fmt(d.energy)] + [_fmt(v) for v in d.linear_momentum] + [_fmt(v) for v in d.angular_momentum]
            row += [_fmt(d.min_phi), str(d.iterations)]
            w.writerow(row)


__all__ = ["SimState", "SimOptions", "StepResult", "Trajectory", "SolverFailure", "ContactImpulse",
           "step", "simulate", "init_from_velocity", "velocities", "diagnostics", "write_trajectory_csv"]
