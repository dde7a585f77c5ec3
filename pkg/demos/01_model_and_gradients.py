"""Tour of the data model: designs, activation masks, the ReLU forward map,
and the two gradient-step formulas (finite-sample and population).

Run:  python demos/01_model_and_gradients.py
"""
import numpy as np

from reludyn import (
    Regularizer,
    activation_mask,
    empirical_step,
    expected_step,
    forward,
    loss,
    no_regularizer,
    polar,
    sample_design,
    teacher,
)

# A design is an N x d matrix with i.i.d. standard-normal rows, reproducible
# from its seed.
design = sample_design(n_samples=12, n_features=2, seed=42)
print("design entries (first 4 rows):")
print(design.entries[:4])

# The teacher generates the targets; the classic planar choice is (1, 1).
w_star = teacher([1.0, 1.0])
mask = activation_mask(design, w_star)
print(f"\nactive samples under the teacher: {mask.n_active} of {design.n_samples}")
print("forward map (ReLU of Xw*):", np.round(forward(design, w_star), 3))

# The loss is the mean squared ReLU mismatch plus (lambda/2) R(w).
w = np.array([0.4, -0.2])
for reg in (no_regularizer(), Regularizer("l2", 0.1), Regularizer("l1", 0.1)):
    print(f"loss with {reg.kind:4s} penalty: {loss(design, w_star, w, reg):.4f}")

# The empirical step is the update direction computed from this sample;
# under the corrected convention it is the exact negative loss gradient.
reg = Regularizer("l2", 0.1, "corrected")
print("\nempirical step at w:", np.round(empirical_step(design, w_star, w, reg), 4))

# Its expectation over designs has a closed form driven by the polar pair
# (norm ratio, angle).
pair = polar(w, w_star)
print(f"polar pair: alpha={pair.alpha:.3f}, theta={np.degrees(pair.theta):.1f} deg")
print("population step at w:", np.round(expected_step(w_star, w, reg), 4))

# Averaging the empirical step over many fresh designs recovers the
# population step.
acc = np.zeros(2)
m = 3000
for i in range(m):
    acc += empirical_step(sample_design(100, 2, seed=i), w_star, w, reg)
acc /= m
print("Monte-Carlo mean over", m, "designs:", np.round(acc, 4))
print("relative gap:",
      np.linalg.norm(acc - expected_step(w_star, w, reg))
      / np.linalg.norm(expected_step(w_star, w, reg)))
