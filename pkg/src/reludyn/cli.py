"""Command-line front door: simulations, solvers, bounds, the ratio grid,
phase fields, and probability lookups, all written to disk deterministically.

Scientific outcomes (including the probabilistic rank-deficiency event) exit
0 and are encoded in the reports; exit 2 marks bad configuration, exit 3 an
I/O failure.  Every command writes a manifest.json echoing its resolved
configuration, and re-running a command from the same configuration
reproduces its primary outputs byte for byte at any thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .analytic import (
    DegenerateMaskError,
    NewtonConvergenceError,
    lambda_bound_l1,
    lambda_bound_l2,
    rank_tail_probability,
    solve_optimum_l1,
    solve_optimum_l2,
    theoretical_probability,
    vdot,
)
from .dynamics import (
    StopRule,
    classify_outcome,
    run_expected_flow,
    run_gd,
    sample_init,
    trial_seeds,
    write_trajectory_csv,
    write_trajectory_json,
)
from .experiments import (
    GridConfig,
    demo_four,
    phase_field,
    run_grid,
    write_phase_csv,
    write_phase_svg,
    write_table_csv,
    write_table_json,
)
from .model import Regularizer, sample_design, unit_ones_teacher


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_teacher(spec: str, d: int) -> np.ndarray:
    if spec == "ones":
        return unit_ones_teacher(d).values
    try:
        values = np.array([float(tok) for tok in spec.split(",")], dtype=float)
    except ValueError as exc:
        raise CliError(f"cannot parse teacher {spec!r}: {exc}") from exc
    if values.shape[0] != d:
        raise CliError(f"teacher has {values.shape[0]} entries, expected {d}")
    if not np.any(values != 0.0):
        raise CliError("teacher must be nonzero")
    return values


def _regularizer(args) -> Regularizer:
    lam = args.lam
    if lam < 0.0 or not np.isfinite(lam):
        raise CliError(f"--lambda must be finite and nonnegative, got {lam}")
    kind = args.reg
    if kind == "none" and lam != 0.0:
        raise CliError("--reg none requires --lambda 0")
    return Regularizer(kind, lam, args.convention)


def _stop_rule(args) -> StopRule:
    try:
        return StopRule(max_steps=args.max_steps, step_norm_tol=args.step_tol,
                        distance_tol=args.dist_tol, divergence_radius=args.div_radius)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _ensure_outdir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path!r}: {exc}", code=3) from exc


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _manifest(out_dir: str, command: str, config: dict, outputs: list) -> None:
    _write_json({"command": command, "config": config, "outputs": sorted(outputs),
                 "version": __version__}, os.path.join(out_dir, "manifest.json"))


def _solver_payload(report) -> dict:
    return {
        "kind": report.kind,
        "optimum": [float(x) for x in report.optimum.values],
        "residual": report.residual,
        "mask_consistent": report.mask_consistent,
        "iterations": report.iterations,
        "lambda": report.lambda_used,
        "convention": report.convention,
        "sign_stable": report.sign_stable,
        "degenerate": False,
    }


def _bound_payload(bound) -> dict:
    doc = {"bound_primary": bound.bound_primary}
    if bound.bound_explicit is not None:
        doc["bound_explicit"] = bound.bound_explicit
    if bound.bound_positive_only is not None:
        doc["bound_positive_only"] = bound.bound_positive_only
    if bound.u_estimate is not None:
        doc["u_estimate"] = [float(x) for x in bound.u_estimate]
    return doc


def cmd_prob(args) -> int:
    if not 0.0 < args.epsilon < 1.0:
        raise CliError(f"--epsilon must lie in (0, 1), got {args.epsilon}")
    if args.d > args.N:
        raise CliError("--d must not exceed --N")
    doc = {
        "n_samples": args.N,
        "n_features": args.d,
        "epsilon": args.epsilon,
        "a_d": rank_tail_probability(args.N, args.d),
        "probability": theoretical_probability(args.N, args.d, args.epsilon),
    }
    if args.k is not None:
        if not 0 <= args.k <= args.N:
            raise CliError(f"--k must lie in [0, {args.N}]")
        doc["k"] = args.k
        doc["a_k"] = rank_tail_probability(args.N, args.k)
    print(json.dumps(doc, indent=2, sort_keys=True))
    if args.out:
        _ensure_outdir(args.out)
        _write_json(doc, os.path.join(args.out, "prob.json"))
        _manifest(args.out, "prob", {"N": args.N, "d": args.d, "epsilon": args.epsilon,
                                     "k": args.k}, ["prob.json"])
    return 0


def _simulate_config(args) -> dict:
    return {
        "N": args.N, "d": args.d, "seed": args.seed, "reg": args.reg,
        "lambda": args.lam, "convention": args.convention, "eta": args.eta,
        "epsilon": args.epsilon, "teacher": args.teacher, "flow": args.flow,
        "max_steps": args.max_steps, "step_tol": args.step_tol,
        "dist_tol": args.dist_tol, "div_radius": args.div_radius,
        "record_stride": args.record_stride,
    }


def cmd_simulate(args) -> int:
    if args.eta <= 0.0:
        raise CliError(f"--eta must be positive, got {args.eta}")
    if not 0.0 < args.epsilon < 1.0:
        raise CliError(f"--epsilon must lie in (0, 1), got {args.epsilon}")
    reg = _regularizer(args)
    stop = _stop_rule(args)
    teacher_values = _parse_teacher(args.teacher, args.d)
    dseed, _, iseed = trial_seeds(args.seed, 0, 0)
    design = sample_design(args.N, args.d, dseed)
    w1 = sample_init(teacher_values, args.epsilon, iseed)
    report = None
    if reg.kind in ("l1", "l2"):
        try:
            solve = solve_optimum_l2 if reg.kind == "l2" else solve_optimum_l1
            report = solve(design, teacher_values, reg.lam, reg.convention)
        except (DegenerateMaskError, NewtonConvergenceError, np.linalg.LinAlgError):
            report = None
    target = report if (report is not None and report.mask_consistent) else None
    seed_info = {"master_seed": args.seed, "design_seed": dseed, "init_seed": iseed}
    if args.flow == "expected":
        trajectory = run_expected_flow(teacher_values, w1, args.eta, reg, stop,
                                       opt=target, record_stride=args.record_stride,
                                       seed_info=seed_info)
    else:
        trajectory = run_gd(design, teacher_values, w1, args.eta, reg, stop,
                            opt=target, record_stride=args.record_stride,
                            seed_info=seed_info)
    outcome = classify_outcome(trajectory, target, stop)
    _ensure_outdir(args.out)
    write_trajectory_csv(trajectory, os.path.join(args.out, "trajectory.csv"))
    write_trajectory_json(trajectory, os.path.join(args.out, "trajectory.json"), extra={
        "outcome": {"kind": outcome.kind, "final_distance": outcome.final_distance,
                    "steps_taken": outcome.steps_taken},
        "config": _simulate_config(args),
    })
    _manifest(args.out, "simulate", _simulate_config(args),
              ["trajectory.csv", "trajectory.json"])
    return 0


def cmd_solve(args) -> int:
    if args.reg not in ("l1", "l2"):
        raise CliError("solve needs --reg l1 or l2")
    reg = _regularizer(args)
    teacher_values = _parse_teacher(args.teacher, args.d)
    dseed, _, _ = trial_seeds(args.seed, 0, 0)
    design = sample_design(args.N, args.d, dseed)
    config = {"N": args.N, "d": args.d, "seed": args.seed, "reg": args.reg,
              "lambda": args.lam, "convention": args.convention, "teacher": args.teacher}
    _ensure_outdir(args.out)
    try:
        solve = solve_optimum_l2 if reg.kind == "l2" else solve_optimum_l1
        report = solve(design, teacher_values, reg.lam, reg.convention)
    except (DegenerateMaskError, NewtonConvergenceError) as exc:
        doc = {"degenerate": True, "reason": str(exc), "kind": reg.kind,
               "lambda": reg.lam, "convention": reg.convention}
        _write_json(doc, os.path.join(args.out, "solution.json"))
        _manifest(args.out, "solve", config, ["solution.json"])
        return 0
    doc = _solver_payload(report)
    try:
        doc["bounds"] = _bound_payload(
            lambda_bound_l2(design, teacher_values) if reg.kind == "l2"
            else lambda_bound_l1(design, teacher_values, report))
    except (DegenerateMaskError, ValueError) as exc:
        doc["bounds"] = {"unavailable": str(exc)}
    _write_json(doc, os.path.join(args.out, "solution.json"))
    _manifest(args.out, "solve", config, ["solution.json"])
    return 0


def cmd_bounds(args) -> int:
    teacher_values = _parse_teacher(args.teacher, args.d)
    dseed, _, _ = trial_seeds(args.seed, 0, 0)
    design = sample_design(args.N, args.d, dseed)
    config = {"N": args.N, "d": args.d, "seed": args.seed,
              "convention": args.convention, "teacher": args.teacher}
    _ensure_outdir(args.out)
    doc = {"N": args.N, "d": args.d, "convention": args.convention}
    try:
        doc["l2"] = _bound_payload(lambda_bound_l2(design, teacher_values))
        # First-order direction taken at the lam -> 0 limit, i.e. at the teacher.
        ref = solve_optimum_l1(design, teacher_values, 0.0, args.convention)
        doc["l1"] = _bound_payload(lambda_bound_l1(design, teacher_values, ref))
        doc["degenerate"] = False
    except (DegenerateMaskError, NewtonConvergenceError) as exc:
        doc = {"degenerate": True, "reason": str(exc), "N": args.N, "d": args.d}
    _write_json(doc, os.path.join(args.out, "bounds.json"))
    _manifest(args.out, "bounds", config, ["bounds.json"])
    return 0


def cmd_table1(args) -> int:
    try:
        config = GridConfig(
            d_values=tuple(args.d_values), n_values=tuple(args.n_values),
            lambda_values=tuple(args.lambda_values), reg_kinds=tuple(args.regs),
            trials=args.trials, eta=args.eta, epsilon=args.epsilon,
            master_seed=args.seed, convention=args.convention,
            stop=_stop_rule(args), teacher_mode=args.teacher_mode)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    report = run_grid(config, threads=args.threads)
    _ensure_outdir(args.out)
    write_table_csv(report, os.path.join(args.out, "table1.csv"))
    write_table_json(report, os.path.join(args.out, "table1.json"))
    from .experiments import table_report_dict
    _manifest(args.out, "table1", table_report_dict(report)["config"],
              ["table1.csv", "table1.json"])
    return 0


def cmd_phase(args) -> int:
    if args.d != 2:
        raise CliError("phase fields are planar: --d must be 2")
    reg = _regularizer(args)
    teacher_values = _parse_teacher(args.teacher, args.d)
    design = None
    if args.source == "empirical":
        dseed, _, _ = trial_seeds(args.seed, 0, 0)
        design = sample_design(args.N, args.d, dseed)
    field = phase_field(reg, teacher_values, source=args.source, design=design,
                        extent=(args.extent_lo, args.extent_hi),
                        resolution=args.resolution)
    config = {"N": args.N, "d": args.d, "seed": args.seed, "reg": args.reg,
              "lambda": args.lam, "convention": args.convention,
              "source": args.source, "resolution": args.resolution,
              "extent": [args.extent_lo, args.extent_hi], "teacher": args.teacher,
              "format": args.format}
    _ensure_outdir(args.out)
    outputs = ["phase.csv"]
    write_phase_csv(field, os.path.join(args.out, "phase.csv"))
    if args.format == "svg":
        write_phase_svg(field, teacher_values, os.path.join(args.out, "phase.svg"))
        outputs.append("phase.svg")
    _manifest(args.out, "phase", config, outputs)
    return 0


def cmd_demo_four(args) -> int:
    seeds = args.seeds
    if len(seeds) != 4:
        raise CliError("--seeds needs exactly 4 integers")
    runs = demo_four(eta=args.eta, seeds=seeds, convention=args.convention,
                     stop=_stop_rule(args))
    _ensure_outdir(args.out)
    outputs = []
    summary = {}
    for run in runs:
        sub = os.path.join(args.out, run.name)
        os.makedirs(sub, exist_ok=True)
        write_trajectory_csv(run.trajectory, os.path.join(sub, "trajectory.csv"))
        write_trajectory_json(run.trajectory, os.path.join(sub, "trajectory.json"), extra={
            "outcome": {"kind": run.outcome.kind,
                        "final_distance": run.outcome.final_distance,
                        "steps_taken": run.outcome.steps_taken},
        })
        outputs += [f"{run.name}/trajectory.csv", f"{run.name}/trajectory.json"]
        summary[run.name] = run.outcome.kind
    config = {"eta": args.eta, "seeds": list(seeds), "convention": args.convention}
    _write_json(summary, os.path.join(args.out, "outcomes.json"))
    outputs.append("outcomes.json")
    _manifest(args.out, "demo-four", config, outputs)
    return 0


def cmd_lyapunov_scan(args) -> int:
    if args.reg not in ("l1", "l2"):
        raise CliError("lyapunov-scan needs --reg l1 or l2")
    if args.samples < 1 or args.bands < 1:
        raise CliError("--samples and --bands must be positive")
    teacher_values = _parse_teacher(args.teacher, args.d)
    tn = float(np.linalg.norm(teacher_values))
    rows = []
    for lam in args.lambdas:
        if lam < 0.0:
            raise CliError(f"--lambda must be nonnegative, got {lam}")
        reg = Regularizer(args.reg, lam, args.convention)
        dseed, _, sseed = trial_seeds(args.seed, 0, 0)
        design = sample_design(args.N, args.d, dseed)
        solve = solve_optimum_l2 if args.reg == "l2" else solve_optimum_l1
        try:
            report = solve(design, teacher_values, lam, args.convention)
        except (DegenerateMaskError, NewtonConvergenceError) as exc:
            raise CliError(f"instance is degenerate: {exc}") from exc
        rng = np.random.default_rng(sseed)
        edges = np.linspace(0.0, np.pi / 2.0, args.bands + 1)
        worst = np.full(args.bands, -np.inf)
        counts = np.zeros(args.bands, dtype=int)
        drawn = 0
        while drawn < args.samples:
            # Uniform in the teacher-centered ball of radius |w*|, off the
            # teacher line and away from the origin.
            v = rng.standard_normal(args.d)
            v /= np.linalg.norm(v)
            w = teacher_values + tn * rng.random() ** (1.0 / args.d) * v
            nw = np.linalg.norm(w)
            if nw < 1e-12 * tn:
                continue
            cos = abs(w @ teacher_values) / (nw * tn)
            if cos > 1.0 - 1e-12:
                continue
            drawn += 1
            theta = np.arccos(np.clip(w @ teacher_values / (nw * tn), -1.0, 1.0))
            band = min(int(np.searchsorted(edges, theta, side="right")) - 1, args.bands - 1)
            band = max(band, 0)
            value = vdot(w, report, teacher_values, reg)
            counts[band] += 1
            worst[band] = max(worst[band], value)
        for b in range(args.bands):
            if counts[b] == 0:
                continue
            rows.append((edges[b], edges[b + 1], lam, worst[b], counts[b]))
    _ensure_outdir(args.out)
    path = os.path.join(args.out, "lyapunov_scan.csv")
    with open(path, "w", newline="\n") as handle:
        handle.write("theta_lo,theta_hi,lambda,vdot_max,n_samples\n")
        for lo, hi, lam, worst, count in rows:
            handle.write(",".join([_fmt(lo), _fmt(hi), _fmt(lam), _fmt(worst),
                                   str(count)]) + "\n")
    config = {"N": args.N, "d": args.d, "seed": args.seed, "reg": args.reg,
              "lambdas": list(args.lambdas), "convention": args.convention,
              "samples": args.samples, "bands": args.bands,
              "teacher": args.teacher}
    _manifest(args.out, "lyapunov-scan", config, ["lyapunov_scan.csv"])
    return 0


def _add_common(parser, default_convention="corrected"):
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--format", choices=("csv", "json", "svg"), default="csv",
                        help="optional extra output format")
    parser.add_argument("--convention", choices=("paper", "corrected"),
                        default=default_convention,
                        help="sign convention for the regularization step term")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for grid cells")


def _add_stop(parser):
    parser.add_argument("--max-steps", type=int, default=10_000)
    parser.add_argument("--step-tol", dest="step_tol", type=float, default=1e-8)
    parser.add_argument("--dist-tol", dest="dist_tol", type=float, default=1e-2)
    parser.add_argument("--div-radius", dest="div_radius", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reludyn",
        description="One-ReLU student-teacher dynamics: simulation and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trajectory and export it")
    _add_common(p)
    _add_stop(p)
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--reg", choices=("none", "l1", "l2"), default="l2")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--teacher", type=str, default="ones",
                   help="'ones' or comma-separated values")
    p.add_argument("--flow", choices=("empirical", "expected"), default="empirical")
    p.add_argument("--record-stride", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="certified optimum for one instance")
    _add_common(p)
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--reg", choices=("l1", "l2"), default="l2")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--teacher", type=str, default="ones")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bounds", help="admissibility bounds for one instance")
    _add_common(p)
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--teacher", type=str, default="ones")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("table1", help="convergence-ratio grid vs the certified probability")
    _add_common(p, default_convention="paper")
    _add_stop(p)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--d-values", type=int, nargs="+", default=[2, 3, 5])
    p.add_argument("--n-values", type=int, nargs="+", default=[10, 20, 100])
    p.add_argument("--lambda-values", type=float, nargs="+", default=[0.001, 0.01, 0.1])
    p.add_argument("--regs", nargs="+", choices=("l1", "l2"), default=["l2", "l1"])
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--teacher-mode", choices=("ones", "random"), default="ones")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("phase", help="normalized planar step field")
    _add_common(p)
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--reg", choices=("none", "l1", "l2"), default="l1")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--source", choices=("empirical", "expected"), default="empirical")
    p.add_argument("--resolution", type=int, default=25)
    p.add_argument("--extent-lo", type=float, default=-2.0)
    p.add_argument("--extent-hi", type=float, default=2.0)
    p.add_argument("--teacher", type=str, default="1,1")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("demo-four", help="four canonical runs: l1/l2, small/large lambda")
    _add_common(p, default_convention="paper")
    _add_stop(p)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--seeds", type=int, nargs="+", default=[102, 103, 104, 105])
    p.set_defaults(func=cmd_demo_four)

    p = sub.add_parser("lyapunov-scan",
                       help="max Lyapunov rate per angle band over sampled points")
    _add_common(p)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--reg", choices=("l1", "l2"), default="l2")
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=[0.01])
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--bands", type=int, default=12)
    p.add_argument("--teacher", type=str, default="ones")
    p.set_defaults(func=cmd_lyapunov_scan)

    p = sub.add_parser("prob", help="rank-tail probability and certified ratio")
    _add_common(p)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_prob)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
