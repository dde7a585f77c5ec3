import csv
import json

import numpy as np
import pytest

from reludyn import (
    Regularizer,
    StopRule,
    classify_outcome,
    init_ball_radius,
    no_regularizer,
    polar,
    run_expected_flow,
    run_gd,
    sample_design,
    sample_init,
    solve_optimum_l2,
    teacher,
    trial_seeds,
    unit_ones_teacher,
    write_trajectory_csv,
    write_trajectory_json,
)
from reludyn.analytic import SolverReport
from reludyn.model import optimum


def consistent_report(values, lam=0.0, kind="l2"):
    """Hand-built solver report for classification tests."""
    return SolverReport(kind=kind, optimum=optimum(values), residual=0.0,
                        mask_consistent=True, iterations=1, lambda_used=lam,
                        convention="corrected")


class TestSampleInit:
    def test_ball_membership(self):
        t = teacher([1.0, 1.0])
        r = init_ball_radius(t, 0.1)
        for seed in range(300):
            w = sample_init(t, 0.1, seed)
            assert np.linalg.norm(w.values) <= r

    def test_radius_value(self):
        # d=2, eps=0.1, |w*| = sqrt(2): r = 0.1 sqrt(2 pi / 3) sqrt(2).
        assert init_ball_radius(teacher([1.0, 1.0]), 0.1) == pytest.approx(0.2046653, abs=1e-6)

    def test_deterministic(self):
        t = unit_ones_teacher(3)
        a = sample_init(t, 0.1, 11)
        b = sample_init(t, 0.1, 11)
        assert np.array_equal(a.values, b.values)

    def test_norm_power_moment(self):
        # E |w|^d = r^d / 2 for the uniform ball.
        t = teacher([1.0, 1.0])
        r = init_ball_radius(t, 0.1)
        rng = np.random.default_rng(2)
        values = np.empty(100_000)
        for i in range(values.size):
            direction = rng.standard_normal(2)
            direction /= np.linalg.norm(direction)
            values[i] = np.linalg.norm(r * rng.random() ** 0.5 * direction) ** 2
        assert values.mean() == pytest.approx(r ** 2 / 2.0, rel=0.01)

    def test_epsilon_range(self):
        t = unit_ones_teacher(2)
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                sample_init(t, bad, 0)


class TestTrialSeeds:
    def test_deterministic_and_distinct(self):
        assert trial_seeds(42, 3, 7) == trial_seeds(42, 3, 7)
        assert trial_seeds(42, 3, 7) != trial_seeds(42, 3, 8)
        assert trial_seeds(42, 3, 7) != trial_seeds(42, 4, 7)
        assert trial_seeds(41, 3, 7) != trial_seeds(42, 3, 7)


class TestRunGd:
    def test_starts_at_teacher_is_stationary(self):
        d = sample_design(20, 2, seed=4)
        t = unit_ones_teacher(2)
        traj = run_gd(d, t, t.values, eta=0.05, reg=no_regularizer())
        assert traj.terminal_reason == "stationary"
        assert traj.t[-1] == 1
        assert np.array_equal(traj.final_w, t.values)

    def test_deterministic(self):
        d = sample_design(30, 2, seed=9)
        t = unit_ones_teacher(2)
        w1 = sample_init(t, 0.1, 5)
        reg = Regularizer("l2", 0.01)
        a = run_gd(d, t, w1, 0.05, reg)
        b = run_gd(d, t, w1, 0.05, reg)
        assert np.array_equal(a.weights, b.weights)
        assert a.terminal_reason == b.terminal_reason

    def test_unregularized_runs_reach_teacher(self):
        # Small-ball inits at N=100, d=2: at least 90% of seeded runs get
        # within 1e-3 of the teacher inside the step budget.
        t = unit_ones_teacher(2)
        stop = StopRule(max_steps=10_000, distance_tol=1e-3)
        hits = 0
        for trial in range(100):
            dseed, _, iseed = trial_seeds(321, 0, trial)
            d = sample_design(100, 2, dseed)
            w1 = sample_init(t, 0.1, iseed)
            traj = run_gd(d, t, w1, 0.05, no_regularizer(), stop,
                          opt=t.values, record_stride=stop.max_steps)
            hits += traj.terminal_reason == "reached_optimum"
        assert hits >= 90

    def test_large_lambda_often_fails(self):
        # l2 at lam = 0.1 with few samples per feature: a substantial share
        # of runs ends away from the certified optimum.
        t = unit_ones_teacher(5)
        stop = StopRule()
        failures = 0
        trials = 50
        for trial in range(trials):
            dseed, _, iseed = trial_seeds(99, 0, trial)
            d = sample_design(10, 5, dseed)
            w1 = sample_init(t, 0.1, iseed)
            reg = Regularizer("l2", 0.1, "paper")
            try:
                rep = solve_optimum_l2(d, t, 0.1, "paper")
            except Exception:
                rep = None
            target = rep if (rep is not None and rep.mask_consistent) else None
            traj = run_gd(d, t, w1, 0.05, reg, stop, opt=target,
                          record_stride=stop.max_steps)
            outcome = classify_outcome(traj, target, stop)
            failures += outcome.kind != "converged_to_optimum"
        assert failures >= trials // 2

    def test_divergence_is_classified_not_propagated(self):
        # A huge step size blows the iterate up; the trajectory stays finite.
        d = sample_design(20, 2, seed=12)
        t = unit_ones_teacher(2)
        traj = run_gd(d, t, np.array([5.0, -3.0]), eta=50.0, reg=no_regularizer(),
                      stop=StopRule(max_steps=200))
        assert traj.terminal_reason == "diverged"
        assert np.all(np.isfinite(traj.weights))
        assert np.all(np.isfinite(traj.loss))
        outcome = classify_outcome(traj, None, StopRule(max_steps=200))
        assert outcome.kind == "not_converged"

    def test_halved_step_size_consistency(self):
        # First-order integrator: halving eta with a doubled budget lands
        # within 10 eta of the original endpoint.
        d = sample_design(40, 3, seed=21)
        t = unit_ones_teacher(3)
        w1 = sample_init(t, 0.1, 8)
        reg = Regularizer("l2", 0.01)
        eta = 0.05
        base = run_gd(d, t, w1, eta, reg,
                      StopRule(max_steps=300, step_norm_tol=1e-300))
        half = run_gd(d, t, w1, eta / 2, reg,
                      StopRule(max_steps=600, step_norm_tol=1e-300))
        assert np.linalg.norm(base.final_w - half.final_w) <= 10 * eta

    def test_records_strictly_increasing(self):
        d = sample_design(20, 2, seed=1)
        t = unit_ones_teacher(2)
        traj = run_gd(d, t, sample_init(t, 0.1, 1), 0.05, no_regularizer(),
                      StopRule(max_steps=500), record_stride=7)
        assert np.all(np.diff(traj.t) > 0)
        assert traj.t[0] == 1

    def test_touched_zero_flag(self):
        d = sample_design(20, 2, seed=2)
        t = unit_ones_teacher(2)
        reg = Regularizer("l1", 0.01)
        traj = run_gd(d, t, np.array([0.0, 0.1]), 0.05, reg, StopRule(max_steps=5))
        assert traj.touched_zero
        traj2 = run_gd(d, t, np.array([0.2, 0.1]), 0.05, reg, StopRule(max_steps=5))
        assert not traj2.touched_zero


class TestRunExpectedFlow:
    def test_converges_to_teacher_without_penalty(self):
        t = unit_ones_teacher(2)
        stop = StopRule(max_steps=20_000, distance_tol=1e-3)
        rng = np.random.default_rng(3)
        for _ in range(20):
            w1 = rng.standard_normal(2) * 0.3
            if polar(w1, t.values).theta > np.pi / 2:
                continue
            traj = run_expected_flow(t, w1, 0.05, no_regularizer(), stop,
                                     opt=t.values, record_stride=stop.max_steps)
            assert traj.terminal_reason == "reached_optimum"

    def test_lyapunov_decreases_inside_ball(self):
        # Certified-lambda l2 instance: the recorded energy never increases.
        design = sample_design(100, 3, seed=15)
        t = unit_ones_teacher(3)
        rep = solve_optimum_l2(design, t, 0.01)
        assert rep.mask_consistent
        rng = np.random.default_rng(7)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        w1 = t.values + 0.6 * v
        reg = Regularizer("l2", 0.01)
        traj = run_expected_flow(t, w1, 0.05, reg, StopRule(), opt=rep)
        assert traj.terminal_reason == "reached_optimum"
        assert np.all(np.diff(traj.lyapunov_v) <= 1e-12)

    def test_collinear_start_stays_on_the_line(self):
        t = unit_ones_teacher(2)
        traj = run_expected_flow(t, 0.25 * t.values, 0.05, no_regularizer(),
                                 StopRule(max_steps=300, step_norm_tol=1e-300))
        for w in traj.weights:
            assert polar(w, t.values).theta < 1e-9

    def test_pole_truncates(self):
        t = unit_ones_teacher(2)
        traj = run_expected_flow(t, np.zeros(2), 0.05, no_regularizer(),
                                 StopRule(max_steps=10))
        assert traj.terminal_reason == "pole"
        assert traj.t.size == 0
        assert traj.failed_step == 1


class TestClassifyOutcome:
    def test_ends_at_optimum(self):
        d = sample_design(20, 2, seed=5)
        t = unit_ones_teacher(2)
        rep = consistent_report(t.values)
        traj = run_gd(d, t, t.values, 0.05, no_regularizer(), opt=rep)
        outcome = classify_outcome(traj, rep, StopRule())
        assert outcome.kind == "converged_to_optimum"
        assert outcome.final_distance == 0.0

    def test_inconsistent_optimum_is_at_best_stationary(self):
        d = sample_design(20, 2, seed=5)
        t = unit_ones_teacher(2)
        rep = SolverReport(kind="l2", optimum=optimum(t.values), residual=0.0,
                           mask_consistent=False, iterations=1, lambda_used=0.1,
                           convention="corrected")
        traj = run_gd(d, t, t.values, 0.05, no_regularizer(), opt=None)
        outcome = classify_outcome(traj, rep, StopRule())
        assert outcome.kind == "converged_to_stationary"

    def test_no_optimum_stationary(self):
        d = sample_design(20, 2, seed=5)
        t = unit_ones_teacher(2)
        traj = run_gd(d, t, t.values, 0.05, no_regularizer())
        outcome = classify_outcome(traj, None, StopRule())
        assert outcome.kind == "converged_to_stationary"
        assert outcome.final_distance == float("inf")


class TestInvariants:
    @pytest.mark.parametrize("kind,conv", [("l1", "paper"), ("l2", "corrected")])
    def test_no_nonfinite_records(self, kind, conv):
        rng = np.random.default_rng(31)
        t = unit_ones_teacher(3)
        for trial in range(10):
            d = sample_design(15, 3, seed=trial)
            w1 = rng.standard_normal(3) * rng.uniform(0.1, 5.0)
            traj = run_gd(d, t, w1, 0.5, Regularizer(kind, 0.1, conv),
                          StopRule(max_steps=300))
            for column in (traj.weights, traj.loss, traj.step_norm):
                assert np.all(np.isfinite(column))


class TestTrajectoryExport:
    def make_traj(self, tmp_path):
        d = sample_design(15, 3, seed=8)
        t = unit_ones_teacher(3)
        rep = solve_optimum_l2(d, t, 0.01)
        w1 = sample_init(t, 0.1, 4)
        return run_gd(d, t, w1, 0.05, Regularizer("l2", 0.01), StopRule(),
                      opt=rep, seed_info={"design_seed": 8, "init_seed": 4})

    def test_csv_header_and_shape(self, tmp_path):
        traj = self.make_traj(tmp_path)
        path = tmp_path / "trajectory.csv"
        write_trajectory_csv(traj, path)
        with open(path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["t", "w_0", "w_1", "w_2", "loss", "step_norm", "lyapunov_v"]
        assert len(rows) - 1 == traj.t.size
        # values round-trip through repr
        assert float(rows[1][1]) == traj.weights[0, 0]

    def test_json_sidecar(self, tmp_path):
        traj = self.make_traj(tmp_path)
        path = tmp_path / "trajectory.json"
        write_trajectory_json(traj, path, extra={"note": 1})
        doc = json.loads(path.read_text())
        assert doc["regularizer"] == {"kind": "l2", "lambda": 0.01,
                                      "convention": "corrected"}
        assert doc["terminal_reason"] == traj.terminal_reason
        assert doc["seed_info"] == {"design_seed": 8, "init_seed": 4}
        assert doc["note"] == 1


class TestStopRule:
    def test_validation(self):
        with pytest.raises(ValueError):
            StopRule(max_steps=0)
        with pytest.raises(ValueError):
            StopRule(step_norm_tol=0.0)
        with pytest.raises(ValueError):
            StopRule(distance_tol=-1.0)
