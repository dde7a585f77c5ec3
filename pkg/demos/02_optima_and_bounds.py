"""Certified optima and admissibility bounds.

With a small penalty coefficient the regularized optimum stays close to the
teacher and keeps the teacher's activation pattern; the bounds quantify how
small is small enough.  Run:  python demos/02_optima_and_bounds.py
"""
import numpy as np

from reludyn import (
    lambda_bound_l1,
    lambda_bound_l2,
    rank_tail_probability,
    sample_design,
    solve_optimum_l1,
    solve_optimum_l2,
    unit_ones_teacher,
)

design = sample_design(n_samples=20, n_features=3, seed=7)
w_star = unit_ones_teacher(3)

# The l2 optimum is a ridge-style linear solve under the teacher mask.
for lam in (0.0, 0.01, 0.05):
    report = solve_optimum_l2(design, w_star, lam)
    print(f"l2 lam={lam:<5}: optimum={np.round(report.optimum.values, 4)}, "
          f"mask_consistent={report.mask_consistent}, residual={report.residual:.2e}")

# The l1 optimum solves an implicit equation by Newton iteration, started at
# the teacher (the lam = 0 solution).
for lam in (0.01, 0.05):
    report = solve_optimum_l1(design, w_star, lam)
    print(f"l1 lam={lam:<5}: optimum={np.round(report.optimum.values, 4)}, "
          f"iterations={report.iterations}, sign_stable={report.sign_stable}")

# Admissibility bounds: below them, mask consistency is guaranteed.
b2 = lambda_bound_l2(design, w_star)
ref = solve_optimum_l1(design, w_star, 0.0)
b1 = lambda_bound_l1(design, w_star, ref)
print(f"\nl2 bound: {b2.bound_primary:.4f}")
print(f"l1 bounds: primary={b1.bound_primary:.4f}, "
      f"positive-side={b1.bound_positive_only:.4f}, explicit={b1.bound_explicit:.4f}")

# Check the guarantee end to end at 90% of each bound.
r2 = solve_optimum_l2(design, w_star, 0.9 * b2.bound_primary)
r1 = solve_optimum_l1(design, w_star, 0.9 * b1.bound_primary)
print(f"at 0.9x bound: l2 consistent={r2.mask_consistent}, l1 consistent={r1.mask_consistent}")

# The whole analysis conditions on the teacher mask having enough active
# rows; the failure probability is a binomial tail.
print(f"\nP(at most d active rows) for N=20, d=3: {rank_tail_probability(20, 3):.6f}")
print("same event at N=10, d=5:", rank_tail_probability(10, 5))
