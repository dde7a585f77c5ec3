"""Trajectories of the discrete dynamics and planar phase fields.

Reproduces the four canonical runs (l1/l2 at a small and a large penalty)
and exports a normalized step field around the teacher.
Run:  python demos/04_trajectories_and_phase_fields.py
"""
import os

import numpy as np

from reludyn import (
    Regularizer,
    demo_four,
    phase_field,
    sample_design,
    write_phase_csv,
    write_phase_svg,
    write_trajectory_csv,
)

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

# Four canonical runs at N=10, d=2, teacher (1, 1).
print("four canonical runs:")
for run in demo_four():
    traj = run.trajectory
    print(f"  {run.name:16s} lam={run.regularizer.lam:<5} -> {run.outcome.kind:24s} "
          f"steps={traj.t[-1]:5d} final_distance={run.outcome.final_distance:.4f}")
    write_trajectory_csv(traj, os.path.join(out_dir, f"{run.name}.csv"))

# A phase field shows the normalized update direction over the plane; the
# origin is flagged undefined for l1 (no subgradient direction there).
design = sample_design(10, 2, seed=3)
teacher_values = np.array([1.0, 1.0])
for kind in ("l1", "l2"):
    field = phase_field(Regularizer(kind, 0.01), teacher_values,
                        source="empirical", design=design)
    n_undef = int((~field.defined).sum())
    write_phase_csv(field, os.path.join(out_dir, f"phase_{kind}.csv"))
    write_phase_svg(field, teacher_values, os.path.join(out_dir, f"phase_{kind}.svg"))
    print(f"phase field ({kind}): {field.x.size} points, {n_undef} undefined")

print(f"\nwrote CSVs and SVGs to {out_dir}")
