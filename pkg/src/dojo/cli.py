"""Command-line entry point ``dojo-cli``.

Exit codes: 0 success, 1 a scenario check failed, 2 solver failure or bad input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import ScenarioConfig, load_scenario_config
from .scenarios import ScenarioReport, run_scenario
from .sim import SolverFailure
from .sysid import (SysidError, SysidModel, SysidParams, make_synthetic_dataset, perturb_params, read_dataset,
                    sysid_fit, write_dataset)
from .ipsolver import SolverOptions

log = logging.getLogger("dojo.cli")

EXIT_OK, EXIT_CHECK, EXIT_SOLVER = 0, 1, 2


def _model(cfg: ScenarioConfig) -> SysidModel:
    return SysidModel(half_extents=tuple(cfg.box_half_extents), timestep=cfg.sysid_h, cone_mode=cfg.cone_mode,
                      solver=SolverOptions(r_tol=min(cfg.r_tol, 1e-6), kappa_tol=min(cfg.kappa_tol, 1e-6)),
                      kappa_grad=cfg.kappa_grad)


def _truth(cfg: ScenarioConfig) -> SysidParams:
    return SysidParams.box(cfg.true_friction, tuple(cfg.box_half_extents))


def _dataset_path(cfg: ScenarioConfig) -> Path:
    return Path(cfg.dataset_file) if cfg.dataset_file is not None else Path(cfg.output_dir) / "dataset.csv"


def gen_data(cfg: ScenarioConfig) -> Path:
    ds = make_synthetic_dataset(_truth(cfg), cfg.n_traj, cfg.seed, cfg.noise_std, cfg.traj_steps, _model(cfg))
    path = _dataset_path(cfg)
    write_dataset(ds, path)
    print(f"wrote {len(ds)} triplets to {path}")
    return path


def _initial_guess(cfg: ScenarioConfig) -> SysidParams:
    if cfg.initial_friction is not None or cfg.initial_vertices is not None:
        base = _truth(cfg)
        c_f = cfg.initial_friction if cfg.initial_friction is not None else base.c_f
        verts = np.asarray(cfg.initial_vertices) if cfg.initial_vertices is not None else base.vertices
        return SysidParams(c_f, verts)
    return perturb_params(_truth(cfg), cfg.perturbation, np.random.default_rng(cfg.seed + 1))


def fit(dataset_path, cfg: ScenarioConfig) -> ScenarioReport:
    ds = read_dataset(dataset_path)
    theta0 = _initial_guess(cfg)
    t0 = time.perf_counter()
    est, trace = sysid_fit(ds, theta0, cfg.weights, cfg.max_gn_iters, _model(cfg))
    elapsed = time.perf_counter() - t0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"c_f": est.c_f, "vertices": est.vertices.tolist(), "iterations": trace.iterations,
           "converged": trace.converged, "seconds": elapsed, "losses": trace.losses}
    (out / "sysid_result.json").write_text(json.dumps(doc, indent=2))
    with (out / "sysid_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "skipped", "c_f"])
        for k, (loss, skipped, x) in enumerate(zip(trace.losses, trace.skipped, trace.params)):
            w.writerow([k, "%.17g" % loss, skipped, "%.17g" % x[0]])
    (out / "sysid_trace.gp").write_text(
        "set datafile separator ','\nset logscale y\nset xlabel 'iteration'\nset ylabel 'loss'\n"
        "set terminal pngcairo size 900,600\nset output 'sysid_trace.png'\n"
        "plot 'sysid_trace.csv' using 1:2 every ::1 with linespoints title 'loss'\n")
    rep = ScenarioReport("sysid", files=[out / "sysid_result.json", out / "sysid_trace.csv"])
    truth = _truth(cfg)
    cf_err = abs(est.c_f - truth.c_f) / truth.c_f
    v_err = float(np.max(np.linalg.norm(est.vertices - truth.vertices, axis=1)
                         / np.linalg.norm(truth.vertices, axis=1)))
    rep.values.update(c_f_error=cf_err, vertex_error=v_err, seconds=elapsed)
    rep.add("friction within 5% of truth", cf_err < 0.05, f"relative error {cf_err:.3e}")
    rep.add("vertices within 5% of truth", v_err < 0.05, f"worst relative error {v_err:.3e}")
    return rep


def _report(rep: ScenarioReport) -> int:
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_CHECK


def _load(path) -> ScenarioConfig:
    try:
        return load_scenario_config(path)
    except (OSError, ValidationError, ValueError) as err:
        raise _InputError(f"cannot load config {path}: {err}") from err


class _InputError(Exception):
    pass


def _dispatch(args) -> int:
    if args.command == "gen-data":
        gen_data(_load(args.config))
        return EXIT_OK
    if args.command == "sysid":
        if not Path(args.dataset).exists():
            raise _InputError(f"dataset {args.dataset} does not exist")
        return _report(fit(args.dataset, _load(args.config)))
    cfg = _load(args.config)
    if cfg.scenario == "sysid":
        return _report(fit(gen_data(cfg), cfg))
    return _report(run_scenario(cfg))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dojo-cli", description="Contact simulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario described by a JSON config")
    run.add_argument("config")
    sid = sub.add_parser("sysid", help="fit friction and vertices to a triplet dataset")
    sid.add_argument("dataset")
    sid.add_argument("config")
    gen = sub.add_parser("gen-data", help="simulate box tosses and write a triplet dataset")
    gen.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except _InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverFailure as err:
        print(f"solver failure at step {err.step_index}: {err}", file=sys.stderr)
        if err.result is not None:
            for k, (r, kv, a) in enumerate(err.result.history):
                print(f"  iter {k:3d}  r_vio {r:.3e}  kappa_vio {kv:.3e}  alpha {a:.3e}", file=sys.stderr)
        return EXIT_SOLVER
    except SysidError as err:
        print(f"system identification failed: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
