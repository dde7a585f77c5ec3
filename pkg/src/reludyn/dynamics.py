"""Discrete gradient-descent iteration, explicit-Euler population flow,
ball initialization, outcome classification, and trajectory export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .analytic import SolverReport
from .model import (
    Design,
    Regularizer,
    WeightVector,
    Weights,
    _as_values,
    empirical_step,
    expected_step,
    population_loss,
    student,
)

TERMINAL_REASONS = ("stationary", "reached_optimum", "diverged", "budget_exhausted", "pole")

OUTCOME_KINDS = ("converged_to_optimum", "converged_to_stationary", "not_converged")


@dataclass(frozen=True)
class StopRule:
    """Termination thresholds for a run.

    distance_tol and divergence_radius are relative, in units of the teacher
    norm.  Defaults keep the full experiment grid reproducible in minutes.
    """

    max_steps: int = 10_000
    step_norm_tol: float = 1e-8
    distance_tol: float = 1e-2
    divergence_radius: float = 10.0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        for name in ("step_norm_tol", "distance_tol", "divergence_radius"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Trajectory:
    """Recorded run of the dynamics.

    Columns are aligned arrays indexed by recorded step; ``lyapunov_v`` is
    0.5 |w - w_opt|^2 when an optimum was supplied and NaN otherwise.
    ``touched_zero`` flags l1 steps taken with some exactly-zero component,
    where the zero-subgradient convention applies.
    """

    t: np.ndarray
    weights: np.ndarray
    loss: np.ndarray
    step_norm: np.ndarray
    lyapunov_v: np.ndarray
    terminal_reason: str
    touched_zero: bool
    eta: float
    regularizer: Regularizer
    teacher: np.ndarray
    optimum: Optional[np.ndarray] = None
    seed_info: Optional[dict] = None
    failed_step: Optional[int] = None

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def teacher_norm(self) -> float:
        return float(np.linalg.norm(self.teacher))

    @property
    def final_w(self) -> np.ndarray:
        return self.weights[-1]

    @property
    def final_step_norm(self) -> float:
        return float(self.step_norm[-1])

    @property
    def final_distance(self) -> float:
        if self.optimum is None:
            return float("inf")
        return float(np.linalg.norm(self.weights[-1] - self.optimum))


@dataclass(frozen=True)
class Outcome:
    """Classification of a finished trajectory."""

    kind: str
    final_distance: float
    steps_taken: int


def init_ball_radius(teacher_w: Weights, epsilon: float) -> float:
    """Radius eps * sqrt(2 pi / (d + 1)) * |w*| of the certified init ball."""
    tv = _as_values(teacher_w)
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    d = tv.shape[0]
    return epsilon * np.sqrt(2.0 * np.pi / (d + 1)) * float(np.linalg.norm(tv))


def sample_init(teacher_w: Weights, epsilon: float, seed: int) -> WeightVector:
    """Uniform draw from the origin-centered init ball.

    Direction is a normalized Gaussian, the radius r * U^(1/d); the draw
    order (direction, then radius) is part of the seeding contract.
    """
    tv = _as_values(teacher_w)
    if not np.any(tv != 0.0):
        raise ValueError("teacher vector is zero")
    r = init_ball_radius(tv, epsilon)
    d = tv.shape[0]
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    return student(r * rng.random() ** (1.0 / d) * direction)


def trial_seeds(master_seed: int, cell_index: int, trial_index: int) -> tuple:
    """Derive (design_seed, teacher_seed, init_seed) for one trial.

    Children are spawned as SeedSequence(master_seed, spawn_key=(cell_index,
    trial_index)), so any execution order or thread count yields the same
    streams.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(cell_index, trial_index))
    a, b, c = ss.generate_state(3, np.uint64)
    return int(a), int(b), int(c)


def _optimum_values(opt) -> Optional[np.ndarray]:
    if opt is None:
        return None
    if isinstance(opt, SolverReport):
        return opt.optimum.values
    return _as_values(opt)


def _integrate(step_fn: Callable[[np.ndarray], np.ndarray],
               loss_fn: Callable[[np.ndarray], float],
               w1: np.ndarray, eta: float, reg: Regularizer, stop: StopRule,
               opt_values: Optional[np.ndarray], teacher_norm: float,
               record_stride: int, pole_guard: bool) -> tuple:
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if record_stride < 1:
        raise ValueError("record_stride must be at least 1")
    ts, ws, ls, sns, vs = [], [], [], [], []

    def record(t, w, lv, sn, v):
        ts.append(t)
        ws.append(w.copy())
        ls.append(lv)
        sns.append(sn)
        vs.append(v)

    w = w1.copy()
    touched = False
    reason = "budget_exhausted"
    failed_step = None
    for t in range(1, stop.max_steps + 1):
        if pole_guard and not np.any(w != 0.0):
            reason = "pole"
            failed_step = t
            break
        if reg.kind == "l1" and np.any(w == 0.0):
            touched = True
        dw = step_fn(w)
        lv = loss_fn(w)
        sn = float(np.linalg.norm(dw))
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(dw)) and np.isfinite(lv)):
            # Never recorded: trajectories carry finite numbers only.
            reason = "diverged"
            failed_step = t
            break
        wn = float(np.linalg.norm(w))
        dist = None
        v = float("nan")
        if opt_values is not None:
            dist = float(np.linalg.norm(w - opt_values))
            v = 0.5 * dist * dist
        stop_reason = None
        if wn > stop.divergence_radius * teacher_norm:
            stop_reason = "diverged"
        elif dist is not None and dist <= stop.distance_tol * teacher_norm:
            stop_reason = "reached_optimum"
        elif sn <= stop.step_norm_tol:
            stop_reason = "stationary"
        if ((t - 1) % record_stride == 0) or stop_reason is not None or t == stop.max_steps:
            record(t, w, lv, sn, v)
        if stop_reason is not None:
            reason = stop_reason
            break
        if t < stop.max_steps:
            w = w + eta * dw
    return (np.array(ts, dtype=np.int64), np.array(ws), np.array(ls),
            np.array(sns), np.array(vs), reason, touched, failed_step)


def run_gd(design: Design, teacher_w: Weights, w1: Weights, eta: float,
           reg: Regularizer, stop: StopRule = StopRule(),
           opt: Union[SolverReport, WeightVector, np.ndarray, None] = None,
           record_stride: int = 1, seed_info: Optional[dict] = None) -> Trajectory:
    """Iterate the finite-sample dynamics w <- w + eta * empirical_step(w).

    Parameters
    ----------
    design, teacher_w : problem instance; the teacher defines the targets.
    w1 : starting point.
    eta : step size.
    reg : penalty kind, coefficient, and sign convention.
    stop : termination thresholds; see StopRule.
    opt : optional optimum enabling the distance stop and the Lyapunov column.
    record_stride : keep every k-th step (first and terminal steps always).

    Non-finite iterates terminate the run as "diverged"; no recorded row ever
    contains a non-finite weight.
    """
    tv = _as_values(teacher_w)
    v1 = _as_values(w1)
    opt_values = _optimum_values(opt)
    target = np.maximum(design.entries @ tv, 0.0)
    X = design.entries
    n = design.n_samples

    def step_fn(w):
        z = X @ w
        m = z > 0.0
        fit = X.T @ np.where(m, target - np.where(m, z, 0.0), 0.0) / n
        return fit + reg.step_term(w)

    def loss_fn(w):
        r = target - np.maximum(X @ w, 0.0)
        return 0.5 / n * float(r @ r) + 0.5 * reg.lam * reg.value(w)

    t, ws, ls, sns, vs, reason, touched, failed = _integrate(
        step_fn, loss_fn, v1, eta, reg, stop, opt_values,
        float(np.linalg.norm(tv)), record_stride, pole_guard=False)
    return Trajectory(t=t, weights=ws, loss=ls, step_norm=sns, lyapunov_v=vs,
                      terminal_reason=reason, touched_zero=touched, eta=eta,
                      regularizer=reg, teacher=tv.copy(), optimum=opt_values,
                      seed_info=seed_info, failed_step=failed)


def run_expected_flow(teacher_w: Weights, w1: Weights, eta: float,
                      reg: Regularizer, stop: StopRule = StopRule(),
                      opt: Union[SolverReport, WeightVector, np.ndarray, None] = None,
                      record_stride: int = 1,
                      seed_info: Optional[dict] = None) -> Trajectory:
    """Explicit-Euler integration of the population dynamics.

    Same loop as run_gd but stepping along expected_step; reaching w = 0
    truncates the trajectory with terminal reason "pole" (the population
    step is undefined there).  The loss column carries the closed-form
    population loss.
    """
    tv = _as_values(teacher_w)
    v1 = _as_values(w1)
    opt_values = _optimum_values(opt)

    def step_fn(w):
        return expected_step(tv, w, reg)

    def loss_fn(w):
        return population_loss(tv, w, reg)

    t, ws, ls, sns, vs, reason, touched, failed = _integrate(
        step_fn, loss_fn, v1, eta, reg, stop, opt_values,
        float(np.linalg.norm(tv)), record_stride, pole_guard=True)
    return Trajectory(t=t, weights=ws, loss=ls, step_norm=sns, lyapunov_v=vs,
                      terminal_reason=reason, touched_zero=touched, eta=eta,
                      regularizer=reg, teacher=tv.copy(), optimum=opt_values,
                      seed_info=seed_info, failed_step=failed)


def classify_outcome(trajectory: Trajectory, opt: Optional[SolverReport],
                     stop: StopRule) -> Outcome:
    """Map a finished trajectory to one of the three outcome kinds.

    converged_to_optimum requires a mask-consistent certified optimum within
    the distance tolerance; a small final step alone only certifies
    convergence to some stationary point.
    """
    if trajectory.t.size == 0:
        raise ValueError("empty trajectory")
    tn = trajectory.teacher_norm
    final_dist = float("inf")
    if opt is not None:
        final_dist = float(np.linalg.norm(trajectory.final_w - opt.optimum.values))
    steps = int(trajectory.t[-1])
    diverged = trajectory.terminal_reason in ("diverged", "pole")
    if (opt is not None and opt.mask_consistent
            and final_dist <= stop.distance_tol * tn and not diverged):
        return Outcome("converged_to_optimum", final_dist, steps)
    if trajectory.final_step_norm <= stop.step_norm_tol and not diverged:
        return Outcome("converged_to_stationary", final_dist, steps)
    return Outcome("not_converged", final_dist, steps)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """Write the step table with header t,w_0,...,w_{d-1},loss,step_norm,lyapunov_v."""
    d = trajectory.n_features
    header = ",".join(["t"] + [f"w_{j}" for j in range(d)] + ["loss", "step_norm", "lyapunov_v"])
    with open(path, "w", newline="\n") as handle:
        handle.write(header + "\n")
        for i in range(trajectory.t.size):
            row = [str(int(trajectory.t[i]))]
            row += [_fmt(x) for x in trajectory.weights[i]]
            row += [_fmt(trajectory.loss[i]), _fmt(trajectory.step_norm[i]),
                    _fmt(trajectory.lyapunov_v[i])]
            handle.write(",".join(row) + "\n")


def trajectory_sidecar(trajectory: Trajectory, extra: Optional[dict] = None) -> dict:
    """JSON-ready run metadata: config, seeds, terminal state."""
    doc = {
        "eta": trajectory.eta,
        "regularizer": {
            "kind": trajectory.regularizer.kind,
            "lambda": trajectory.regularizer.lam,
            "convention": trajectory.regularizer.convention,
        },
        "teacher": [float(x) for x in trajectory.teacher],
        "optimum": None if trajectory.optimum is None
        else [float(x) for x in trajectory.optimum],
        "terminal_reason": trajectory.terminal_reason,
        "touched_zero": trajectory.touched_zero,
        "steps_recorded": int(trajectory.t.size),
        "final_step": int(trajectory.t[-1]) if trajectory.t.size else None,
        "failed_step": trajectory.failed_step,
        "seed_info": trajectory.seed_info,
    }
    if extra:
        doc.update(extra)
    return doc


def write_trajectory_json(trajectory: Trajectory, path, extra: Optional[dict] = None) -> None:
    with open(path, "w") as handle:
        json.dump(trajectory_sidecar(trajectory, extra), handle, indent=2, sort_keys=True)
        handle.write("\n")
