"""Core data model: Gaussian designs, the ReLU forward map, the regularized
square loss, and the empirical / population gradient steps of the one-ReLU
student-teacher dynamics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np

RegKind = Literal["none", "l1", "l2"]
Convention = Literal["paper", "corrected"]
Role = Literal["student", "teacher", "optimum"]

Weights = Union["WeightVector", Sequence[float], np.ndarray]

TWO_PI = 2.0 * np.pi


def _as_values(w: Weights) -> np.ndarray:
    """Coerce a weight argument (WeightVector or array-like) to a 1-d float array."""
    if isinstance(w, WeightVector):
        return w.values
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"weights must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weights contain non-finite entries")
    return arr


def _check_dims(design: "Design", w: np.ndarray) -> None:
    if w.shape[0] != design.n_features:
        raise ValueError(
            f"dimension mismatch: design has {design.n_features} features, "
            f"weights have {w.shape[0]}"
        )


@dataclass(frozen=True, eq=False)
class Design:
    """An n_samples x n_features input matrix with i.i.d. standard-normal rows.

    Regenerating from the same seed reproduces the entries bit for bit
    (numpy ``default_rng``, i.e. PCG64).
    """

    entries: np.ndarray
    n_samples: int
    n_features: int
    seed: int

    def __post_init__(self):
        if self.entries.shape != (self.n_samples, self.n_features):
            raise ValueError("entries shape does not match declared dimensions")
        if not self.n_samples > self.n_features >= 1:
            raise ValueError(
                f"need n_samples > n_features >= 1, got "
                f"({self.n_samples}, {self.n_features})"
            )
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("design entries contain non-finite values")
        self.entries.setflags(write=False)


def sample_design(n_samples: int, n_features: int, seed: int) -> Design:
    """Draw a fresh design matrix with independent N(0, 1) entries."""
    if not n_samples > n_features >= 1:
        raise ValueError(
            f"need n_samples > n_features >= 1, got ({n_samples}, {n_features})"
        )
    entries = np.random.default_rng(seed).standard_normal((n_samples, n_features))
    return Design(entries=entries, n_samples=n_samples, n_features=n_features, seed=seed)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A weight vector together with the role it plays in an experiment."""

    values: np.ndarray
    role: Role = "student"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("weight values must be 1-d")
        if not np.all(np.isfinite(values)):
            raise ValueError("weight values contain non-finite entries")
        if self.role == "teacher" and not np.any(values != 0.0):
            raise ValueError("a teacher vector must be nonzero")
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def student(values) -> WeightVector:
    return WeightVector(np.array(values, dtype=float), role="student")


def teacher(values) -> WeightVector:
    return WeightVector(np.array(values, dtype=float), role="teacher")


def optimum(values) -> WeightVector:
    return WeightVector(np.array(values, dtype=float), role="optimum")


def unit_ones_teacher(n_features: int) -> WeightVector:
    """The fixed unit-norm all-ones teacher used as the experiment default."""
    return teacher(np.ones(n_features) / np.sqrt(n_features))


def _weight_digest(values: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(values).tobytes(), digest_size=8).hexdigest()


@dataclass(frozen=True, eq=False)
class ActivationMask:
    """Boolean per-sample mask: True where the pre-activation is strictly positive."""

    bits: np.ndarray
    derived_from: tuple

    def __post_init__(self):
        self.bits.setflags(write=False)

    @property
    def n_active(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Regularizer:
    """Penalty specification: kind, coefficient, and the step-sign convention.

    ``convention="corrected"`` makes the update the exact negative gradient of
    the penalized loss (the penalty gradient is subtracted).  ``"paper"`` keeps
    the published closed form, in which the penalty gradient enters the update
    with a plus sign; the two differ exactly by ``lam * dR/dw``.
    """

    kind: RegKind = "none"
    lam: float = 0.0
    convention: Convention = "corrected"

    def __post_init__(self):
        if self.kind not in ("none", "l1", "l2"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.convention not in ("paper", "corrected"):
            raise ValueError(f"unknown convention {self.convention!r}")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError("lambda must be finite and nonnegative")
        if self.kind == "none" and self.lam != 0.0:
            raise ValueError("kind='none' forces lambda = 0")

    @property
    def step_sign(self) -> float:
        return 1.0 if self.convention == "paper" else -1.0

    def value(self, w: Weights) -> float:
        """R(w): squared l1 norm, squared l2 norm, or 0."""
        v = _as_values(w)
        if self.kind == "l1":
            return float(np.abs(v).sum() ** 2)
        if self.kind == "l2":
            return float(v @ v)
        return 0.0

    def gradient(self, w: Weights) -> np.ndarray:
        """dR/dw, with the zero-subgradient convention sign(0) = 0 for l1."""
        v = _as_values(w)
        if self.kind == "l1":
            return 2.0 * np.abs(v).sum() * np.sign(v)
        if self.kind == "l2":
            return 2.0 * v
        return np.zeros_like(v)

    def step_term(self, w: Weights) -> np.ndarray:
        """The regularization contribution to the update, sign per convention."""
        if self.kind == "none" or self.lam == 0.0:
            return np.zeros_like(_as_values(w))
        return self.step_sign * 0.5 * self.lam * self.gradient(w)


def no_regularizer() -> Regularizer:
    return Regularizer("none", 0.0)


@dataclass(frozen=True)
class PolarPair:
    """Norm ratio and angle describing a student relative to the teacher.

    alpha = |teacher| / |student|; theta is the angle between them in [0, pi].
    """

    alpha: float
    theta: float


def activation_mask(design: Design, w: Weights) -> ActivationMask:
    """Mask of samples with strictly positive pre-activation; ties at 0 are inactive."""
    v = _as_values(w)
    _check_dims(design, v)
    bits = design.entries @ v > 0.0
    return ActivationMask(bits=bits, derived_from=(design.seed, _weight_digest(v)))


def forward(design: Design, w: Weights) -> np.ndarray:
    """ReLU outputs: elementwise max(Xw, 0)."""
    v = _as_values(w)
    _check_dims(design, v)
    return np.maximum(design.entries @ v, 0.0)


def loss(design: Design, teacher_w: Weights, w: Weights, reg: Regularizer) -> float:
    """Mean squared ReLU mismatch plus (lam/2) R(w)."""
    tv = _as_values(teacher_w)
    v = _as_values(w)
    _check_dims(design, tv)
    _check_dims(design, v)
    r = forward(design, tv) - forward(design, v)
    fit = 0.5 / design.n_samples * float(r @ r)
    return fit + 0.5 * reg.lam * reg.value(v)


def empirical_step(design: Design, teacher_w: Weights, w: Weights, reg: Regularizer) -> np.ndarray:
    """Finite-sample update direction at w.

    Under the corrected convention this is the exact negative gradient of
    ``loss`` wherever no sample sits on an activation boundary and, for l1,
    no component of w is zero.
    """
    tv = _as_values(teacher_w)
    v = _as_values(w)
    _check_dims(design, tv)
    _check_dims(design, v)
    X = design.entries
    z = X @ v
    m = z > 0.0
    resid = np.maximum(X @ tv, 0.0) - np.where(m, z, 0.0)
    fit = X.T @ np.where(m, resid, 0.0) / design.n_samples
    return fit + reg.step_term(v)


def expected_step(teacher_w: Weights, w: Weights, reg: Regularizer) -> np.ndarray:
    """Population average of the update direction over the Gaussian design.

    Undefined at w = 0, where the norm ratio diverges.
    """
    tv = _as_values(teacher_w)
    v = _as_values(w)
    if tv.shape != v.shape:
        raise ValueError("teacher and student dimensions differ")
    pair = polar(v, tv)
    base = 0.5 * (tv - v) + (pair.alpha * np.sin(pair.theta) * v - pair.theta * tv) / TWO_PI
    return base + reg.step_term(v)


def polar(w: Weights, teacher_w: Weights) -> PolarPair:
    """Polar description of w against the teacher: norm ratio and angle."""
    v = _as_values(w)
    tv = _as_values(teacher_w)
    nv = float(np.linalg.norm(v))
    nt = float(np.linalg.norm(tv))
    if nv == 0.0:
        raise ValueError("w = 0: the norm ratio is undefined")
    if nt == 0.0:
        raise ValueError("teacher vector is zero")
    cos = float(np.clip(v @ tv / (nv * nt), -1.0, 1.0))
    return PolarPair(alpha=nt / nv, theta=float(np.arccos(cos)))


def population_loss(teacher_w: Weights, w: Weights, reg: Regularizer) -> float:
    """Expectation of ``loss`` over the Gaussian design, in closed form.

    Uses E[relu(x.a) relu(x.b)] = |a||b| (sin t + (pi - t) cos t) / (2 pi)
    for standard-normal x with angle t between a and b.
    """
    tv = _as_values(teacher_w)
    v = _as_values(w)
    nt = float(np.linalg.norm(tv))
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        fit = 0.25 * nt * nt
    else:
        th = polar(v, tv).theta
        cross = nv * nt * (np.sin(th) + (np.pi - th) * np.cos(th)) / TWO_PI
        fit = 0.25 * (nv * nv + nt * nt) - cross
    return fit + 0.5 * reg.lam * reg.value(v)
