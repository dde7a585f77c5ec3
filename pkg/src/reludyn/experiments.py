"""Convergence-ratio grid, phase fields, and the four-dynamics demonstration.

The grid runner vectorizes all trials of a cell into one batched iteration;
per-trial seeds are split deterministically from the master seed so results
are identical at any thread count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np

from . import analytic, dynamics, model
from .analytic import (
    DegenerateMaskError,
    NewtonConvergenceError,
    SolverReport,
    masked_gram,
    solve_optimum_l1,
    solve_optimum_l2,
    theoretical_probability,
)
from .dynamics import Outcome, StopRule, Trajectory, classify_outcome, run_gd, sample_init, trial_seeds
from .model import Convention, Design, Regularizer, activation_mask, sample_design, unit_ones_teacher

WILSON_Z = 1.959963984540054  # two-sided 95%


@dataclass(frozen=True)
class GridConfig:
    """Parameters of the convergence-ratio experiment grid."""

    d_values: tuple = (2, 3, 5)
    n_values: tuple = (10, 20, 100)
    lambda_values: tuple = (0.001, 0.01, 0.1)
    reg_kinds: tuple = ("l2", "l1")
    trials: int = 500
    eta: float = 0.05
    epsilon: float = 0.1
    master_seed: int = 0
    convention: Convention = "paper"
    stop: StopRule = field(default_factory=StopRule)
    teacher_mode: str = "ones"

    def __post_init__(self):
        for name in ("d_values", "n_values", "lambda_values", "reg_kinds"):
            if not len(getattr(self, name)):
                raise ValueError(f"{name} must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.teacher_mode not in ("ones", "random"):
            raise ValueError("teacher_mode must be 'ones' or 'random'")
        if set(self.reg_kinds) - {"l1", "l2"}:
            raise ValueError("reg_kinds must be a subset of {'l1', 'l2'}")
        if max(self.d_values) >= min(self.n_values):
            raise ValueError("every d must be smaller than every N")

    def cells(self):
        """Deterministic cell enumeration; per-trial seeds key off the index."""
        combos = product(self.d_values, self.n_values, self.reg_kinds, self.lambda_values)
        return [(i,) + c for i, c in enumerate(combos)]


@dataclass(frozen=True)
class TableRow:
    d: int
    n_samples: int
    reg: str
    lam: float
    theoretical: float
    empirical: float
    empirical_stationary: float
    trials: int
    wilson_halfwidth: float
    degenerate: bool


@dataclass
class TableReport:
    rows: list
    config: GridConfig

    def row(self, d: int, n: int, reg: str, lam: float) -> TableRow:
        for r in self.rows:
            if (r.d, r.n_samples, r.reg) == (d, n, reg) and np.isclose(r.lam, lam):
                return r
        raise KeyError((d, n, reg, lam))


def wilson_halfwidth(p_hat: float, n: int, z: float = WILSON_Z) -> float:
    """Half-width of the 95% Wilson score interval for a binomial fraction."""
    if n < 1:
        raise ValueError("n must be positive")
    denom = 1.0 + z * z / n
    return z * np.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom


def make_teacher(d: int, mode: str, teacher_seed: int) -> np.ndarray:
    """Per-trial teacher: fixed unit all-ones, or a seeded random unit vector."""
    if mode == "ones":
        return np.ones(d) / np.sqrt(d)
    v = np.random.default_rng(teacher_seed).standard_normal(d)
    return v / np.linalg.norm(v)


def _solve_certified(design: Design, tv: np.ndarray, reg_kind: str, lam: float,
                     convention: str) -> Optional[SolverReport]:
    """Certified optimum for a trial, or None when none exists (degenerate
    gram, Newton failure, or a mask-inconsistent solution)."""
    try:
        if reg_kind == "l2":
            report = solve_optimum_l2(design, tv, lam, convention)
        else:
            report = solve_optimum_l1(design, tv, lam, convention)
    except (DegenerateMaskError, NewtonConvergenceError, np.linalg.LinAlgError):
        return None
    return report


def run_trial(d: int, n: int, reg_kind: str, lam: float, convention: str,
              eta: float, epsilon: float, stop: StopRule, teacher_mode: str,
              master_seed: int, cell_index: int, trial_index: int) -> Outcome:
    """Reference single-trial protocol (the batched cell runner must agree).

    Fresh design, per-trial teacher and ball init, certified-optimum solve,
    gradient descent, and classification.  The optimum is supplied to the run
    only when it is mask consistent, so the distance stop targets a certified
    point or nothing.
    """
    dseed, tseed, iseed = trial_seeds(master_seed, cell_index, trial_index)
    design = sample_design(n, d, dseed)
    tv = make_teacher(d, teacher_mode, tseed)
    w1 = sample_init(tv, epsilon, iseed)
    reg = Regularizer(reg_kind, lam, convention)
    report = _solve_certified(design, tv, reg_kind, lam, convention)
    target = report if (report is not None and report.mask_consistent) else None
    trajectory = run_gd(design, tv, w1, eta, reg, stop, opt=target,
                        record_stride=stop.max_steps)
    return classify_outcome(trajectory, target, stop)


def _run_cell(config: GridConfig, cell_index: int, d: int, n: int,
              reg_kind: str, lam: float) -> dict:
    """All trials of one grid cell, batched over the trial axis."""
    trials = config.trials
    stop = config.stop
    sgn = 1.0 if config.convention == "paper" else -1.0
    designs = np.empty((trials, n, d))
    teachers = np.empty((trials, d))
    W = np.empty((trials, d))
    for t in range(trials):
        dseed, tseed, iseed = trial_seeds(config.master_seed, cell_index, t)
        designs[t] = sample_design(n, d, dseed).entries
        teachers[t] = make_teacher(d, config.teacher_mode, tseed)
        W[t] = sample_init(teachers[t], config.epsilon, iseed).values
    teacher_norms = np.linalg.norm(teachers, axis=1)
    z_star = np.einsum("tnd,td->tn", designs, teachers)
    mask_star = z_star > 0.0
    target = np.where(mask_star, z_star, 0.0)

    optima = np.zeros((trials, d))
    have = np.zeros(trials, dtype=bool)
    degenerate = np.zeros(trials, dtype=bool)
    for t in range(trials):
        design = Design(designs[t], n, d, seed=0)
        try:
            if reg_kind == "l2":
                report = solve_optimum_l2(design, teachers[t], lam, config.convention)
            else:
                report = solve_optimum_l1(design, teachers[t], lam, config.convention)
        except DegenerateMaskError:
            degenerate[t] = True
            continue
        except (NewtonConvergenceError, np.linalg.LinAlgError):
            continue
        if report.mask_consistent:
            optima[t] = report.optimum.values
            have[t] = True

    # 0 pending, 1 optimum, 2 stationary, 3 not converged
    result = np.zeros(trials, dtype=np.int8)
    active = np.ones(trials, dtype=bool)
    for step in range(1, stop.max_steps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Xa = designs[idx]
        Wa = W[idx]
        z = np.einsum("tnd,td->tn", Xa, Wa)
        m = z > 0.0
        resid = np.where(m, target[idx] - np.where(m, z, 0.0), 0.0)
        dW = np.einsum("tnd,tn->td", Xa, resid) / n
        if lam > 0.0:
            if reg_kind == "l2":
                dW = dW + sgn * lam * Wa
            else:
                dW = dW + sgn * lam * np.abs(Wa).sum(axis=1, keepdims=True) * np.sign(Wa)
        step_norm = np.linalg.norm(dW, axis=1)
        w_norm = np.linalg.norm(Wa, axis=1)
        finite = np.isfinite(dW).all(axis=1) & np.isfinite(Wa).all(axis=1)
        diverged = ~finite | (w_norm > stop.divergence_radius * teacher_norms[idx])
        dist = np.where(have[idx],
                        np.linalg.norm(Wa - optima[idx], axis=1),
                        np.inf)
        reached = ~diverged & (dist <= stop.distance_tol * teacher_norms[idx])
        stationary = ~diverged & ~reached & (step_norm <= stop.step_norm_tol)
        finished = diverged | reached | stationary
        result[idx[diverged]] = 3
        result[idx[reached]] = 1
        result[idx[stationary]] = 2
        active[idx[finished]] = False
        if step < stop.max_steps:
            cont = ~finished
            W[idx[cont]] = Wa[cont] + config.eta * dW[cont]
    # Budget-exhausted leftovers: neither close nor stationary nor diverged.
    result[result == 0] = 3
    return {
        "converged": int((result == 1).sum()),
        "stationary": int((result == 2).sum()),
        "degenerate_trials": int(degenerate.sum()),
    }


def _cell_worker(args) -> tuple:
    config, cell = args
    cell_index, d, n, reg_kind, lam = cell
    return cell_index, _run_cell(config, cell_index, d, n, reg_kind, lam)


def run_grid(config: GridConfig, threads: int = 1) -> TableReport:
    """Run every cell of the grid and collect ratio rows.

    Cells may execute in parallel; outcomes depend only on the master seed
    and the cell enumeration, never on scheduling.
    """
    cells = config.cells()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(_cell_worker, [(config, c) for c in cells]))
    else:
        results = dict(_cell_worker((config, c)) for c in cells)
    rows = []
    for cell_index, d, n, reg_kind, lam in cells:
        counts = results[cell_index]
        empirical = counts["converged"] / config.trials
        rows.append(TableRow(
            d=d, n_samples=n, reg=reg_kind, lam=lam,
            theoretical=theoretical_probability(n, d, config.epsilon),
            empirical=empirical,
            empirical_stationary=counts["stationary"] / config.trials,
            trials=config.trials,
            wilson_halfwidth=float(wilson_halfwidth(empirical, config.trials)),
            degenerate=counts["degenerate_trials"] == config.trials,
        ))
    return TableReport(rows=rows, config=config)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_table_csv(report: TableReport, path) -> None:
    """Fixed-header ratio table: one row per (d, N, reg, lambda) cell."""
    header = "d,N,reg,lambda,theoretical,empirical,empirical_stationary,trials,wilson_halfwidth"
    with open(path, "w", newline="\n") as handle:
        handle.write(header + "\n")
        for r in report.rows:
            handle.write(",".join([
                str(r.d), str(r.n_samples), r.reg, _fmt(r.lam), _fmt(r.theoretical),
                _fmt(r.empirical), _fmt(r.empirical_stationary), str(r.trials),
                _fmt(r.wilson_halfwidth),
            ]) + "\n")


def table_report_dict(report: TableReport) -> dict:
    cfg = report.config
    return {
        "config": {
            "d_values": list(cfg.d_values),
            "n_values": list(cfg.n_values),
            "lambda_values": list(cfg.lambda_values),
            "reg_kinds": list(cfg.reg_kinds),
            "trials": cfg.trials,
            "eta": cfg.eta,
            "epsilon": cfg.epsilon,
            "master_seed": cfg.master_seed,
            "convention": cfg.convention,
            "teacher_mode": cfg.teacher_mode,
            "stop": {
                "max_steps": cfg.stop.max_steps,
                "step_norm_tol": cfg.stop.step_norm_tol,
                "distance_tol": cfg.stop.distance_tol,
                "divergence_radius": cfg.stop.divergence_radius,
            },
        },
        "rows": [{
            "d": r.d, "N": r.n_samples, "reg": r.reg, "lambda": r.lam,
            "theoretical": r.theoretical, "empirical": r.empirical,
            "empirical_stationary": r.empirical_stationary, "trials": r.trials,
            "wilson_halfwidth": r.wilson_halfwidth, "degenerate": r.degenerate,
        } for r in report.rows],
    }


def write_table_json(report: TableReport, path) -> None:
    with open(path, "w") as handle:
        json.dump(table_report_dict(report), handle, indent=2, sort_keys=True)
        handle.write("\n")


@dataclass
class PhaseField:
    """Normalized planar step field on a regular grid."""

    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    defined: np.ndarray
    x_range: tuple
    y_range: tuple
    resolution: int
    source: str
    design_seed: Optional[int] = None


def phase_field(reg: Regularizer, teacher_w, source: str = "expected",
                design: Optional[Design] = None,
                extent: tuple = (-2.0, 2.0), resolution: int = 25) -> PhaseField:
    """Evaluate and normalize the planar step field on a grid.

    ``source="empirical"`` uses the finite-sample step of the given design,
    ``"expected"`` the population step.  Points where the step is undefined
    (the origin, for l1 or for the population source) are flagged instead of
    evaluated; exact fixed points keep a zero arrow.
    """
    tv = model._as_values(teacher_w)
    if tv.shape[0] != 2:
        raise ValueError("phase fields are planar: teacher must have 2 features")
    if source not in ("expected", "empirical"):
        raise ValueError("source must be 'expected' or 'empirical'")
    if source == "empirical":
        if design is None:
            raise ValueError("empirical source needs a design")
        if design.n_features != 2:
            raise ValueError("empirical source needs a planar design")
    lo, hi = float(extent[0]), float(extent[1])
    axis = np.linspace(lo, hi, resolution)
    xs, ys, dxs, dys, flags = [], [], [], [], []
    for yv in axis:
        for xv in axis:
            w = np.array([xv, yv])
            at_origin = xv == 0.0 and yv == 0.0
            ok = not (at_origin and (source == "expected" or reg.kind == "l1"))
            if ok:
                if source == "expected":
                    step = model.expected_step(tv, w, reg)
                else:
                    step = model.empirical_step(design, tv, w, reg)
                nrm = float(np.linalg.norm(step))
                if nrm > 0.0:
                    step = step / nrm
            else:
                step = np.zeros(2)
            xs.append(xv)
            ys.append(yv)
            dxs.append(float(step[0]))
            dys.append(float(step[1]))
            flags.append(ok)
    return PhaseField(x=np.array(xs), y=np.array(ys), dx=np.array(dxs),
                      dy=np.array(dys), defined=np.array(flags),
                      x_range=(lo, hi), y_range=(lo, hi), resolution=resolution,
                      source=source,
                      design_seed=design.seed if design is not None else None)


def write_phase_csv(field: PhaseField, path) -> None:
    with open(path, "w", newline="\n") as handle:
        handle.write("x,y,dx,dy,defined\n")
        for i in range(field.x.size):
            handle.write(",".join([
                _fmt(field.x[i]), _fmt(field.y[i]), _fmt(field.dx[i]),
                _fmt(field.dy[i]), "1" if field.defined[i] else "0",
            ]) + "\n")


def write_phase_svg(field: PhaseField, teacher_w, path, size: int = 480) -> None:
    """Minimal SVG rendering: one line segment per defined arrow, a dot at the
    teacher, nothing else."""
    tv = model._as_values(teacher_w)
    lo, hi = field.x_range
    span = hi - lo

    def sx(v):
        return (v - lo) / span * size

    def sy(v):
        return size - (v - lo) / span * size

    arrow = 0.4 * span / max(field.resolution - 1, 1)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for i in range(field.x.size):
        if not field.defined[i]:
            continue
        x0, y0 = field.x[i], field.y[i]
        x1 = x0 + arrow * field.dx[i]
        y1 = y0 + arrow * field.dy[i]
        lines.append(
            f'<line x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" '
            f'y2="{sy(y1):.2f}" stroke="green" stroke-width="1"/>'
        )
        lines.append(f'<circle cx="{sx(x0):.2f}" cy="{sy(y0):.2f}" r="1.2" fill="black"/>')
    lines.append(
        f'<circle cx="{sx(tv[0]):.2f}" cy="{sy(tv[1]):.2f}" r="5" fill="black"/>'
    )
    lines.append("</svg>")
    with open(path, "w", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


@dataclass
class DemoRun:
    """One of the four demonstration dynamics."""

    name: str
    regularizer: Regularizer
    trajectory: Trajectory
    outcome: Outcome
    solver_report: Optional[SolverReport]


DEMO_CASES = (
    ("l1_small_lambda", "l1", 0.01),
    ("l2_small_lambda", "l2", 0.01),
    ("l1_large_lambda", "l1", 0.1),
    ("l2_large_lambda", "l2", 0.1),
)


def demo_four(eta: float = 0.05, seeds: Sequence[int] = (102, 103, 104, 105),
              convention: Convention = "paper",
              stop: StopRule = StopRule()) -> list:
    """The four canonical runs: l1/l2 at a small and at a large coefficient.

    N=10, d=2, epsilon=0.1, teacher (1, 1).  At the small coefficient the
    dynamics typically reach the certified optimum; at the large one they
    typically do not.
    """
    if len(seeds) != 4:
        raise ValueError("demo_four needs exactly 4 seeds")
    tv = np.array([1.0, 1.0])
    runs = []
    for (name, kind, lam), seed in zip(DEMO_CASES, seeds):
        dseed, _, iseed = trial_seeds(seed, 0, 0)
        design = sample_design(10, 2, dseed)
        w1 = sample_init(tv, 0.1, iseed)
        reg = Regularizer(kind, lam, convention)
        report = _solve_certified(design, tv, kind, lam, convention)
        target = report if (report is not None and report.mask_consistent) else None
        trajectory = run_gd(design, tv, w1, eta, reg, stop, opt=target,
                            seed_info={"master_seed": seed, "design_seed": dseed,
                                       "init_seed": iseed})
        runs.append(DemoRun(name=name, regularizer=reg, trajectory=trajectory,
                            outcome=classify_outcome(trajectory, target, stop),
                            solver_report=report))
    return runs
