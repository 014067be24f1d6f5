"""Desk-scale experiments: box drop, box slide, floating chain and gradient sweep.

Each scenario writes CSV files plus a gnuplot script into the output directory
and returns a :class:`ScenarioReport` whose checks decide the exit status.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .config import ScenarioConfig
from .contact import tangential_velocity
from .ipsolver import SolverOptions
from .mech import BodyConfig, load_mechanism
from .models import box, chain, chain_configs
from .sim import SimOptions, SimState, SolverFailure, init_from_velocity, simulate, step

log = logging.getLogger(__name__)

PENETRATION_TOL = 1e-6
REST_TOL = 1e-6


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ScenarioReport:
    scenario: str
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail):
        self.checks.append(Check(name, bool(passed), detail))

    def summary(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def _solver(cfg: ScenarioConfig) -> SimOptions:
    return SimOptions(SolverOptions(r_tol=cfg.r_tol, kappa_tol=cfg.kappa_tol))


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else "%.17g" % v for v in row])
    return path


def _write_plot(path: Path, title: str, xlabel: str, ylabel: str, series, logy=False) -> Path:
    """``series`` holds ``(csv_name, x_column, y_column, label)`` with 1-based columns."""
    lines = ["set datafile separator ','", f"set title '{title}'", f"set xlabel '{xlabel}'",
             f"set ylabel '{ylabel}'", "set key outside", "set grid"]
    if logy:
        lines.append("set logscale y")
    lines.append(f"set terminal pngcairo size 900,600\nset output '{path.stem}.png'")
    plots = [f"'{f}' using {x}:{y} every ::1 with lines title '{label}'" for f, x, y, label in series]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n")
    return path


def _box_mechanism(cfg: ScenarioConfig, h: float, friction: float, cone_mode: str):
    if cfg.mechanism_file is not None:
        return load_mechanism(cfg.mechanism_file).with_timestep(h)
    return box(tuple(cfg.box_half_extents), 1.0, friction, cone_mode, timestep=h)


# --- box drop --------------------------------------------------------------

def box_drop(cfg: ScenarioConfig) -> ScenarioReport:
    """Drop a box from ``drop_height`` and record the smallest gap every step."""
    out = Path(cfg.output_dir)
    rep = ScenarioReport("box_drop")
    series = []
    for h in cfg.timesteps:
        mech = _box_mechanism(cfg, h, cfg.friction, cfg.cone_mode)
        lift = cfg.box_half_extents[2] + cfg.drop_height
        start = [BodyConfig([0.0, 0.0, lift], quat.IDENTITY)]
        steps = max(1, int(round(cfg.drop_duration / h)))
        t0 = time.perf_counter()
        traj = simulate(mech, SimState(start, start), None, steps, _solver(cfg))
        elapsed = time.perf_counter() - t0
        phi = traj.min_phi()
        name = f"box_drop_h{h:g}.csv"
        rep.files.append(_write_csv(out / name, ["step", "time", "min_phi"],
                                    [[str(k + 1), (k + 1) * h, p] for k, p in enumerate(phi)]))
        series.append((name, 2, 3, f"h = {h:g} s"))
        worst, rest = float(phi.min()), float(phi[-1])
        rep.values[h] = {"min_phi": worst, "rest_phi": rest, "seconds": elapsed}
        rep.add(f"min_phi >= -1e-6 (h={h:g})", worst >= -PENETRATION_TOL, f"min phi {worst:.3e} m")
        rep.add(f"|phi| <= 1e-6 at rest (h={h:g})", abs(rest) <= REST_TOL, f"final phi {rest:.3e} m")
        log.info("box_drop h=%g: %d steps in %.2f s", h, steps, elapsed)
    rep.files.append(_write_plot(out / "box_drop.gp", "Box drop: smallest gap", "time (s)", "min phi (m)", series))
    return rep


# --- box slide -------------------------------------------------------------

def _slide(cfg: ScenarioConfig, cone_mode: str, heading: float):
    h = cfg.h
    mech = _box_mechanism(cfg, h, cfg.friction, cone_mode)
    start = [BodyConfig([0.0, 0.0, cfg.box_half_extents[2]], quat.IDENTITY)]
    vel = cfg.slide_speed * np.array([np.cos(heading), np.sin(heading), 0.0])
    state = init_from_velocity(mech, start, [vel], None)
    steps = max(1, int(round(cfg.slide_duration / h)))
    traj = simulate(mech, state, None, steps, _solver(cfg))
    return mech, state, traj


def lateral_drift(positions, start, heading: float) -> np.ndarray:
    """Signed distance of each position from the line through ``start`` along ``heading``."""
    side = np.array([-np.sin(heading), np.cos(heading), 0.0])
    return (np.asarray(positions) - np.asarray(start)) @ side


def friction_misalignment(mech, traj, initial: SimState, speed_floor: float = 1e-4,
                          load_floor: float = 1e-6) -> float:
    """Largest angle between friction and minus slip velocity over loaded, sliding contacts.

    A contact counts as loaded when its normal impulse is at least ``load_floor``
    times the largest one in that step; separated contacts carry only relaxation noise.
    """
    worst = 0.0
    prev = initial
    index = {b.id: i for i, b in enumerate(mech.bodies)}
    for st, imp in zip(traj.states, traj.impulses):
        top = max((ci.gamma for ci in imp), default=0.0)
        for spec, ci in zip(mech.contacts, imp):
            if ci.gamma < load_floor * top:
                continue
            i = index[spec.body]
            v = tangential_velocity(spec, prev.z_curr[i], st.z_curr[i], mech.timestep)
            nb = np.linalg.norm(ci.friction)
            if np.linalg.norm(v) <= speed_floor or nb == 0.0:
                continue
            cosang = -(ci.friction @ v) / (nb * np.linalg.norm(v))
            worst = max(worst, float(np.arccos(np.clip(cosang, -1.0, 1.0))))
        prev = st
    return worst


def box_slide(cfg: ScenarioConfig) -> ScenarioReport:
    """Slide a box with both cone models at the configured heading and compare lateral drift."""
    out = Path(cfg.output_dir)
    rep = ScenarioReport("box_slide")
    series = []
    rows = []
    for mode in ("nonlinear", "linearized"):
        mech, init, traj = _slide(cfg, mode, cfg.heading)
        pos = np.vstack([init.z_curr[0].p, traj.positions()])
        drift = lateral_drift(pos, pos[0], cfg.heading)
        name = f"box_slide_{mode}.csv"
        t = np.arange(len(pos)) * cfg.h
        rep.files.append(_write_csv(out / name, ["time", "x", "y", "z", "lateral"],
                                    np.column_stack([t, pos, drift])))
        series.append((name, 2, 3, f"{mode} cone"))
        final = abs(float(drift[-1]))
        rows.append([mode, final, float(np.max(np.abs(drift)))])
        rep.values[mode] = {"lateral_drift": final}
        if mode == "nonlinear":
            ang = friction_misalignment(mech, traj, init)
            rep.values[mode]["misalignment"] = ang
            rep.add("nonlinear lateral drift < 1e-6 m", final < 1e-6, f"{final:.3e} m")
            rep.add("nonlinear friction antiparallel within 1e-3 rad", ang < 1e-3, f"{ang:.3e} rad")
        else:
            rep.add("linearized lateral drift > 1e-3 m", final > 1e-3, f"{final:.3e} m")
    rep.files.append(_write_csv(out / "box_slide_summary.csv", ["cone", "final_lateral", "max_lateral"], rows))
    rep.files.append(_write_plot(out / "box_slide.gp", f"Box slide at heading {cfg.heading:.4f} rad", "x (m)",
                                 "y (m)", series))
    return rep


# --- floating chain ----------------------------------------------------------

def chain_controls(n_links: int, duration: float, amplitude: float, seed: int, resolution: float = 0.01):
    """Piecewise-constant random inputs ``u ~ U(0, amplitude)`` on a fixed time grid.

    The grid does not depend on the step size, so runs at different ``h`` see the
    same force history.
    """
    rng = np.random.default_rng(seed)
    n = max(1, int(round(duration / resolution)))
    table = rng.uniform(0.0, amplitude, size=(n, 6 * n_links))

    def at(t: float):
        if t >= duration:
            return None
        return table[min(int(t / resolution), n - 1)]

    return at


@dataclass
class ConservationStats:
    h: float
    linear_drift: float
    angular_drift: float
    energy_slope: float
    energy_mean: float
    energy_ptp: float
    seconds: float


def chain_conservation(n_links: int, h: float, actuation: float, coast: float, amplitude: float, seed: int,
                       solver: SolverOptions = SolverOptions(r_tol=1e-12, kappa_tol=1e-12)):
    """Actuate a free-floating chain, then coast; returns the trajectory and coast statistics."""
    mech = chain(n_links, timestep=h)
    ctrl = chain_controls(n_links, actuation, amplitude, seed)
    n_act = int(round(actuation / h))
    n_coast = int(round(coast / h))
    state = SimState(chain_configs(n_links), chain_configs(n_links))
    t0 = time.perf_counter()
    traj = simulate(mech, state, lambda k: ctrl(k * h), n_act + n_coast, SimOptions(solver))
    elapsed = time.perf_counter() - t0
    lin = traj.linear_momentum()[n_act:]
    ang = traj.angular_momentum()[n_act:]
    energy = traj.energy()[n_act:]

    def drift(x):
        ref = np.linalg.norm(x[0])
        return float(np.max(np.linalg.norm(x - x[0], axis=1)) / max(ref, 1e-300))

    slope = float(np.polyfit(np.arange(len(energy)), energy, 1)[0])
    stats = ConservationStats(h, drift(lin), drift(ang), slope, float(np.mean(energy)), float(np.ptp(energy)), elapsed)
    return traj, stats


def chain_float(cfg: ScenarioConfig) -> ScenarioReport:
    out = Path(cfg.output_dir)
    rep = ScenarioReport("chain_float")
    series, rows = [], []
    for h in cfg.chain_timesteps:
        try:
            traj, st = chain_conservation(cfg.chain_links, h, cfg.actuation_time, cfg.coast_time,
                                          cfg.actuation_max, cfg.seed,
                                          SolverOptions(r_tol=cfg.r_tol, kappa_tol=cfg.kappa_tol))
        except SolverFailure as err:
            # a coarse step can ask for more rotation per step than the discrete
            # momentum map can represent; the step equation then has no root
            rep.add(f"step solvable throughout (h={h:g})", False, f"failed at step {err.step_index}: {err}")
            continue
        lin, ang, en = traj.linear_momentum(), traj.angular_momentum(), traj.energy()
        t = (np.arange(len(en)) + 1) * h
        name = f"chain_float_h{h:g}.csv"
        rep.files.append(_write_csv(out / name, ["time", "energy", "lin_x", "lin_y", "lin_z", "ang_x", "ang_y",
                                                 "ang_z"], np.column_stack([t, en, lin, ang])))
        series.append((name, 1, 2, f"h = {h:g} s"))
        rows.append([h, st.linear_drift, st.angular_drift, st.energy_slope, st.energy_mean, st.energy_ptp])
        rep.values[h] = st
        rep.add(f"linear momentum drift < 1e-8 (h={h:g})", st.linear_drift < 1e-8, f"{st.linear_drift:.3e}")
        rep.add(f"angular momentum drift < 1e-8 (h={h:g})", st.angular_drift < 1e-8, f"{st.angular_drift:.3e}")
        rel = abs(st.energy_slope) / max(abs(st.energy_mean), 1e-300)
        rep.add(f"energy slope < 1e-8 mean (h={h:g})", rel < 1e-8, f"{rel:.3e} per step")
    rep.files.append(_write_csv(out / "chain_float_summary.csv", ["h", "linear_drift", "angular_drift",
                                                                  "energy_slope", "energy_mean", "energy_ptp"], rows))
    rep.files.append(_write_plot(out / "chain_float.gp", "Floating chain energy", "time (s)", "energy (J)", series))
    return rep


# --- gradient sweep ----------------------------------------------------------

def gradient_sweep_values(forces, kappas, h: float = 0.1, friction: float = 0.5, half_extents=(0.1, 0.1, 0.1),
                          solver: SolverOptions = SolverOptions(r_tol=1e-8, kappa_tol=1e-8)):
    """``d(dx)/d f`` for a resting box pushed sideways by ``f``, one column per ``kappa``.

    Also returns the displacement ``dx`` after one step at each force.
    """
    mech = box(half_extents, 1.0, friction, "nonlinear", timestep=h)
    rest = [BodyConfig([0.0, 0.0, half_extents[2]], quat.IDENTITY)]
    state = SimState(rest, rest)
    grads = np.zeros((len(forces), len(kappas)))
    disp = np.zeros(len(forces))
    for i, f in enumerate(forces):
        u = np.zeros(6)
        u[0] = f
        for j, k in enumerate(kappas):
            nxt, _, jac = step(mech, state, u, SimOptions(solver, warm_start=False, kappa_grad=k),
                               want_gradients=True)
            grads[i, j] = jac.d_u[0, 0]
        disp[i] = nxt.z_curr[0].p[0] - rest[0].p[0]
    return disp, grads


def grad_sweep(cfg: ScenarioConfig) -> ScenarioReport:
    out = Path(cfg.output_dir)
    rep = ScenarioReport("grad_sweep")
    forces = np.linspace(cfg.force_min, cfg.force_max, cfg.force_samples)
    disp, grads = gradient_sweep_values(forces, cfg.kappas, cfg.h, cfg.friction, tuple(cfg.box_half_extents),
                                        SolverOptions(r_tol=cfg.r_tol, kappa_tol=cfg.kappa_tol))
    header = ["force", "displacement"] + [f"grad_kappa_{k:g}" for k in cfg.kappas]
    rep.files.append(_write_csv(out / "grad_sweep.csv", header, np.column_stack([forces, disp, grads])))
    series = [("grad_sweep.csv", 1, 3 + j, f"kappa = {k:g}") for j, k in enumerate(cfg.kappas)]
    rep.files.append(_write_plot(out / "grad_sweep.gp", "Gradient of displacement w.r.t. force", "force (N)",
                                 "d dx / d f", series))
    analytic = cfg.h ** 2 / 1.0
    rep.values.update(forces=forces, displacement=disp, gradients=grads)
    for j, k in enumerate(cfg.kappas):
        g = grads[:, j]
        ok = np.all(np.isfinite(g)) and np.all(g >= -1e-12) and np.all(g <= analytic * (1 + 1e-6))
        rep.add(f"gradient within [0, h^2/m] (kappa={k:g})", ok, f"range [{g.min():.3e}, {g.max():.3e}]")
    smooth = grads[:, 0]
    steps = np.diff(smooth)
    rep.add(f"monotone curve (kappa={cfg.kappas[0]:g})", np.all(steps >= -1e-9 * analytic),
            f"largest decrease {max(0.0, -steps.min()):.3e}")
    return rep


SCENARIOS = {"box_drop": box_drop, "box_slide": box_slide, "chain_float": chain_float, "grad_sweep": grad_sweep}


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    if cfg.scenario not in SCENARIOS:
        raise ValueError(f"scenario {cfg.scenario!r} is handled by the sysid commands")
    rep = SCENARIOS[cfg.scenario](cfg)
    summary = Path(cfg.output_dir) / f"{cfg.scenario}_summary.txt"
    summary.write_text(rep.summary() + "\n")
    rep.files.append(summary)
    return rep
