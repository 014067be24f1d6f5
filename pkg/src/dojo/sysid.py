"""System identification of a box's friction coefficient and vertex positions from configuration triplets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import quat
from .diff import implicit_step_gradients
from .ipsolver import SolverOptions
from .mech import BodyConfig
from .models import box, box_vertices
from .sim import SimOptions, SimState, SolverFailure, init_from_velocity, simulate, step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SysidParams:
    c_f: float
    vertices: np.ndarray  # (8, 3), body frame

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(8, 3)
        object.__setattr__(self, "vertices", v)
        if not self.c_f > 0:
            raise ValueError("friction coefficient must be positive")

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.c_f], self.vertices.reshape(-1)])

    @classmethod
    def from_vector(cls, x) -> "SysidParams":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), x[1:].reshape(8, 3))

    @classmethod
    def box(cls, c_f=0.3, half_extents=(0.1, 0.1, 0.1)) -> "SysidParams":
        return cls(c_f, box_vertices(half_extents))


@dataclass(frozen=True)
class SysidModel:
    """Everything about the box that is known and held fixed during identification."""

    mass: float = 1.0
    half_extents: tuple = (0.1, 0.1, 0.1)
    timestep: float = 0.02
    gravity: tuple = (0.0, 0.0, -9.81)
    cone_mode: str = "nonlinear"
    solver: SolverOptions = SolverOptions(r_tol=1e-6, kappa_tol=1e-6)
    kappa_grad: float = 3e-4

    def mechanism(self, params: SysidParams):
        # inertia follows the nominal extents, not the candidate vertices
        return box(self.half_extents, self.mass, params.c_f, self.cone_mode, params.vertices,
                   self.gravity, self.timestep)

    def options(self) -> SimOptions:
        return SimOptions(self.solver, warm_start=False, kappa_grad=self.kappa_grad)


@dataclass(frozen=True)
class Triplet:
    traj_id: int
    step: int
    z_prev: tuple
    z: tuple
    z_next: tuple


@dataclass
class Dataset:
    triplets: list = field(default_factory=list)

    def __len__(self):
        return len(self.triplets)


def _flat(configs) -> list:
    return [v for x in configs for v in np.concatenate([x.p, x.q])]


def _unflat(vals) -> tuple:
    vals = np.asarray(vals, dtype=float).reshape(-1, 7)
    return tuple(BodyConfig(v[:3], quat.normalize(v[3:])) for v in vals)


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(ds.triplets[0].z) if ds.triplets else 1
    header = ["traj_id", "step"]
    for tag in ("prev", "curr", "next"):
        for b in range(n):
            header += [f"{tag}{b}_{c}" for c in ("px", "py", "pz", "qs", "qx", "qy", "qz")]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in ds.triplets:
            w.writerow([t.traj_id, t.step] + ["%.17g" % v for v in _flat(t.z_prev) + _flat(t.z) + _flat(t.z_next)])


def read_dataset(path) -> Dataset:
    ds = Dataset()
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        vals = np.array([float(v) for v in row[2:]])
        k = vals.size // 3
        ds.triplets.append(Triplet(int(row[0]), int(row[1]), _unflat(vals[:k]), _unflat(vals[k:2 * k]),
                                   _unflat(vals[2 * k:])))
    return ds


def make_synthetic_dataset(true_params: SysidParams, n_traj: int = 50, seed: int = 0, noise_std: float = 0.0,
                           T: int = 25, model: SysidModel = SysidModel()) -> Dataset:
    """Simulated box tosses cut into ``T - 2`` triplets per trajectory.

    Each toss starts above the floor with random orientation, velocity and spin.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if T < 3:
        raise ValueError("T must be at least 3")
    rng = np.random.default_rng(seed)
    mech = model.mechanism(true_params)
    ds = Dataset()
    for tid in range(n_traj):
        p = np.array([0.0, 0.0, rng.uniform(0.2, 0.3)])
        q = quat.random_unit(rng)
        v = np.concatenate([rng.uniform(-2.0, 2.0, 2), [rng.uniform(-1.0, 0.5)]])
        w = rng.uniform(-4.0, 4.0, 3)
        state = init_from_velocity(mech, [BodyConfig(p, q)], [v], [w])
        traj = simulate(mech, state, None, T - 1, model.options())
        configs = [state.z_prev] + [s.z_prev for s in traj.states] + [traj.states[-1].z_curr]
        configs = [tuple(c) for c in configs]
        if noise_std > 0:
            configs = [tuple(_noisy(x, noise_std, rng) for x in c) for c in configs]
        for k in range(T - 2):
            ds.triplets.append(Triplet(tid, k, configs[k], configs[k + 1], configs[k + 2]))
    return ds


def _noisy(x: BodyConfig, std: float, rng) -> BodyConfig:
    d = rng.normal(scale=std, size=3)
    return BodyConfig(x.p + rng.normal(scale=std, size=3), quat.quat_mul(x.q, quat.phi_map(0.5 * d)))


def _weights(W) -> np.ndarray:
    if W is None:
        return np.ones(6)
    W = np.asarray(W, dtype=float).reshape(-1)
    if W.size != 6 or np.any(W < 0):
        raise ValueError("W must hold 6 non-negative diagonal weights (p then orientation)")
    return W


def _residual(pred, obs, W) -> np.ndarray:
    x, o = pred[0], obs[0]
    r = np.concatenate([x.p - o.p, (quat.lmat(quat.conj(o.q)) @ x.q)[1:]])
    return np.sqrt(W) * r


@dataclass
class LossResult:
    loss: float
    skipped: int
    residuals: Optional[np.ndarray] = None
    jacobian: Optional[np.ndarray] = None


def evaluate(dataset: Dataset, params: SysidParams, W=None, model: SysidModel = SysidModel(),
             with_jacobian: bool = False) -> LossResult:
    W = _weights(W)
    mech = model.mechanism(params)
    opts = model.options()
    res_all, jac_all, skipped = [], [], 0
    P = len(mech.contacts)
    for t in dataset.triplets:
        try:
            _, out, jac = step(mech, SimState(t.z_prev, t.z), None, opts, want_gradients=with_jacobian)
        except SolverFailure:
            skipped += 1
            continue
        r = _residual(out.z_next, t.z_next, W)
        res_all.append(r)
        if with_jacobian:
            cols = jac.param_columns(P, 1)
            d = jac.d_params
            J = np.hstack([d[:, cols["c_f"]].sum(axis=1, keepdims=True), d[:, cols["offsets"]]])
            rel = quat.lmat(quat.conj(t.z_next[0].q)) @ out.z_next[0].q
            M = (quat.lmat(rel) @ quat.HMAT)[1:]
            J[3:] = M @ J[3:]
            jac_all.append(np.sqrt(W)[:, None] * J)
    if skipped:
        log.warning("skipped %d triplets after solver failures", skipped)
    res = np.concatenate(res_all) if res_all else np.zeros(0)
    jac = np.vstack(jac_all) if jac_all else np.zeros((0, 25))
    return LossResult(0.5 * float(res @ res), skipped, res, jac if with_jacobian else None)


def sysid_loss(dataset: Dataset, params: SysidParams, W=None, model: SysidModel = SysidModel()) -> float:
    """``sum 1/2 |step(z-, z; params) - z+|_W^2`` over the triplets."""
    return evaluate(dataset, params, W, model).loss


@dataclass
class FitTrace:
    losses: list = field(default_factory=list)
    dampings: list = field(default_factory=list)
    params: list = field(default_factory=list)
    hessian_eigs: list = field(default_factory=list)
    c_f_curvature: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    skipped: list = field(default_factory=list)
    stop_reason: str = ""


class SysidError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def sysid_fit(dataset: Dataset, theta0: SysidParams, W=None, max_gn_iters: int = 20,
              model: SysidModel = SysidModel(), rel_tol: float = 1e-8, max_damping: float = 1e8):
    """Levenberg-damped Gauss-Newton; returns ``(SysidParams, FitTrace)``."""
    x = theta0.vector()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial parameters must be finite")
    trace = FitTrace()
    cur = evaluate(dataset, SysidParams.from_vector(x), W, model, with_jacobian=True)
    trace.losses.append(cur.loss)
    trace.params.append(x.copy())
    trace.skipped.append(cur.skipped)
    lam = 1e-6
    for it in range(max_gn_iters):
        trace.iterations = it + 1
        J, r = cur.jacobian, cur.residuals
        H = J.T @ J
        g = J.T @ r
        eigs = np.linalg.eigvalsh(H)
        trace.hessian_eigs.append(eigs)
        trace.c_f_curvature.append(float(H[0, 0]))
        if cur.loss == 0.0 or not np.any(g):
            trace.converged = True
            trace.stop_reason = "zero gradient"
            break
        accepted, solved = False, False
        while lam <= max_damping:
            try:
                dx = -np.linalg.solve(H + lam * np.eye(H.shape[0]), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            solved = True
            xn = x + dx
            if xn[0] <= 0:
                lam *= 10.0
                continue
            # the Jacobian comes along with the trial so an accepted step needs no second pass
            trial = evaluate(dataset, SysidParams.from_vector(xn), W, model, with_jacobian=True)
            if trial.loss < cur.loss and trial.skipped <= cur.skipped:
                accepted = True
                break
            lam *= 10.0
        trace.dampings.append(lam)
        if not accepted:
            if not solved:
                raise SysidError("damped Gauss-Newton system is singular at every damping level", trace)
            trace.converged = True
            trace.stop_reason = "no decrease at maximum damping"
            break
        decrease = (cur.loss - trial.loss) / max(cur.loss, 1e-300)
        x, cur = xn, trial
        trace.losses.append(cur.loss)
        trace.params.append(x.copy())
        trace.skipped.append(cur.skipped)
        log.info("gauss-newton %d: loss %.6e damping %.1e", it + 1, cur.loss, lam)
        lam = max(lam / 10.0, 1e-6)
        if decrease < rel_tol:
            trace.converged = True
            trace.stop_reason = "relative decrease below tolerance"
            break
    else:
        trace.stop_reason = "iteration cap"
    return SysidParams.from_vector(x), trace


def perturb_params(params: SysidParams, scale: float, rng) -> SysidParams:
    x = params.vector()
    return SysidParams.from_vector(x * (1.0 + rng.uniform(-scale, scale, size=x.size)))


__all__ = ["SysidParams", "SysidModel", "Dataset", "Triplet", "make_synthetic_dataset", "sysid_loss",
           "sysid_fit", "write_dataset", "read_dataset", "perturb_params", "evaluate"]
