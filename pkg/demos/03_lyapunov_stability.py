"""Lyapunov view of the population dynamics.

The energy 0.5 |w - w_opt|^2 decreases along the population flow inside the
teacher-centered ball: its rate is a negative quadratic form plus a small
penalty correction.  Run:  python demos/03_lyapunov_stability.py
"""
import numpy as np

from reludyn import (
    Regularizer,
    StopRule,
    lyapunov_eval,
    lyapunov_matrices,
    run_expected_flow,
    sample_design,
    solve_optimum_l2,
    unit_ones_teacher,
    vdot,
)

# The unregularized rate at angle theta is -y' M y with y = (|w|, |w*|);
# M is positive definite on (0, pi/2].
for deg in (5, 30, 60, 90):
    m, p1 = lyapunov_matrices(np.radians(deg))
    evals = np.linalg.eigvalsh(m)
    print(f"theta={deg:2d} deg: eigenvalues of M = {np.round(evals, 4)}")

# A concrete instance: large sample, small coefficient.
design = sample_design(100, 3, seed=15)
w_star = unit_ones_teacher(3)
report = solve_optimum_l2(design, w_star, 0.01)
reg = Regularizer("l2", 0.01)

# The rate is negative at sampled points of the punctured teacher ball.
rng = np.random.default_rng(0)
worst = -np.inf
for _ in range(2000):
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    w = w_star.values + rng.random() ** (1 / 3) * v
    if np.linalg.norm(w) < 1e-9:
        continue
    worst = max(worst, vdot(w, report, w_star, reg))
print(f"\nmax rate over 2000 sampled points: {worst:.2e} (negative = contracting)")

# One point in detail.
w = w_star.values + np.array([0.3, -0.2, 0.1])
ev = lyapunov_eval(w, report, w_star, reg)
print(f"at one point: theta={np.degrees(ev.theta):.1f} deg, rate={ev.vdot:.4f}")

# Along the integrated flow the recorded energy is monotone down to the
# stopping sphere.
traj = run_expected_flow(w_star, w_star.values + np.array([0.5, 0.3, -0.2]),
                         eta=0.05, reg=reg, stop=StopRule(), opt=report)
energies = traj.lyapunov_v
print(f"\nflow: {traj.terminal_reason} after {traj.t[-1]} steps; "
      f"energy {energies[0]:.4f} -> {energies[-1]:.6f}, "
      f"monotone={bool(np.all(np.diff(energies) <= 1e-12))}")
