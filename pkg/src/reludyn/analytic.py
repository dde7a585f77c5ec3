"""Closed-form and Newton solvers for the regularized optimum, lambda
admissibility bounds, mask-rank tail probabilities, positive-definiteness
checks, the perturbed-inverse residual, and Lyapunov quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .model import (
    ActivationMask,
    Convention,
    Design,
    PolarPair,
    Regularizer,
    WeightVector,
    Weights,
    _as_values,
    activation_mask,
    expected_step,
    optimum as optimum_vector,
    polar,
)

__all__ = [
    "DegenerateMaskError",
    "NewtonConvergenceError",
    "MaskedGram",
    "SolverReport",
    "BoundReport",
    "LyapunovEval",
    "rank_tail_probability",
    "theoretical_probability",
    "masked_gram",
    "neumann_residual",
    "solve_optimum_l2",
    "solve_optimum_l1",
    "lambda_bound_l2",
    "lambda_bound_l1",
    "lyapunov_matrices",
    "vdot",
    "lyapunov_eval",
]


class DegenerateMaskError(Exception):
    """The masked Gram matrix is not positive definite, so no certified
    optimum exists for this design/teacher pair.  This is the probabilistic
    failure event of the analysis, not a bug."""


class NewtonConvergenceError(Exception):
    """The implicit-equation Newton solve failed (singular Jacobian or
    iteration budget exhausted)."""


@dataclass(frozen=True)
class MaskedGram:
    """X^T D X for a boolean sample mask D, with positive-definiteness flags.

    ``cholesky_ok`` reports the factorization outcome alone.  ``admissible``
    additionally requires strictly more than n_features active samples, the
    margin under which the analysis guarantees definiteness almost surely;
    its complement has probability A_d = rank_tail_probability(N, d).
    """

    matrix: np.ndarray
    n_active: int
    cholesky_ok: bool
    admissible: bool


@dataclass(frozen=True)
class SolverReport:
    """Outcome of a certified-optimum solve."""

    kind: str
    optimum: WeightVector
    residual: float
    mask_consistent: bool
    iterations: int
    lambda_used: float
    convention: Convention
    sign_stable: bool = True


@dataclass(frozen=True)
class BoundReport:
    """Admissibility thresholds for the regularization coefficient.

    ``bound_primary`` guards the sign of every design row (the threshold the
    solvers are certified under).  For l1, ``bound_positive_only`` is the
    variant restricted to rows with positive teacher pre-activation, and
    ``bound_explicit`` the conservative closed form that avoids the implicit
    first-order direction ``u_estimate``.
    """

    bound_primary: float
    bound_explicit: Optional[float] = None
    bound_positive_only: Optional[float] = None
    u_estimate: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LyapunovEval:
    """Pointwise Lyapunov data: the 2x2 stability matrices and the scalar rate."""

    m_matrix: np.ndarray
    p1_matrix: np.ndarray
    vdot: float
    theta: float
    y: tuple


def rank_tail_probability(n_samples: int, k: int) -> float:
    """Probability that at most k of n_samples fair coin flips land active.

    Exact big-integer evaluation of 2^-N * sum_{i<=k} C(N, i); this is the
    chance that the teacher mask has rank <= k.
    """
    if not 0 <= k <= n_samples:
        raise ValueError(f"k must lie in [0, {n_samples}], got {k}")
    total = sum(math.comb(n_samples, i) for i in range(k + 1))
    return float(Fraction(total, 2 ** n_samples))


def theoretical_probability(n_samples: int, n_features: int, epsilon: float) -> float:
    """Certified convergence probability (1 - eps)/2 * (1 - A_d) for ball inits."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if n_features > n_samples:
        raise ValueError("n_features must not exceed n_samples")
    return (1.0 - epsilon) / 2.0 * (1.0 - rank_tail_probability(n_samples, n_features))


def masked_gram(design: Design, mask: ActivationMask) -> MaskedGram:
    """Form X^T D X over the masked samples and test positive definiteness.

    The factorization check accepts pivots above 1e-12 * trace / d; the
    ``admissible`` flag additionally demands n_active > n_features.
    """
    if mask.bits.shape[0] != design.n_samples:
        raise ValueError("mask length does not match the design")
    rows = design.entries[mask.bits]
    d = design.n_features
    gram = rows.T @ rows if rows.size else np.zeros((d, d))
    n_active = int(mask.bits.sum())
    trace = float(np.trace(gram))
    ok = False
    if trace > 0.0:
        try:
            chol = np.linalg.cholesky(gram)
            pivots = np.diag(chol) ** 2
            ok = bool(np.min(pivots) > 1e-12 * trace / d)
        except np.linalg.LinAlgError:
            ok = False
    return MaskedGram(matrix=gram, n_active=n_active, cholesky_ok=ok,
                      admissible=ok and n_active > d)


def neumann_residual(b_matrix: np.ndarray, epsilon: float) -> float:
    """Max-norm gap between (B - eps I)^-1 and its first-order expansion.

    The expansion is (I + eps B^-1) B^-1; the gap scales as eps^2 and serves
    as a test oracle for the perturbed-inverse approximation.
    """
    B = np.asarray(b_matrix, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("b_matrix must be square")
    if not np.allclose(B, B.T, atol=1e-12 * max(1.0, float(np.abs(B).max()))):
        raise ValueError("b_matrix must be symmetric")
    evals = np.linalg.eigvalsh(B)
    if evals[0] <= 0.0:
        raise ValueError("b_matrix must be positive definite")
    if epsilon < 0.0 or epsilon >= evals[0]:
        raise ValueError("epsilon must lie in [0, smallest eigenvalue)")
    if epsilon == 0.0:
        return 0.0
    eye = np.eye(B.shape[0])
    b_inv = np.linalg.inv(B)
    exact = np.linalg.inv(B - epsilon * eye)
    approx = (eye + epsilon * b_inv) @ b_inv
    return float(np.abs(exact - approx).max())


def _require_pd_gram(design: Design, teacher_w: Weights) -> tuple:
    mask = activation_mask(design, teacher_w)
    gram = masked_gram(design, mask)
    if not gram.cholesky_ok:
        raise DegenerateMaskError(
            f"masked Gram is not positive definite ({gram.n_active} active rows, "
            f"{design.n_features} features); no certified optimum exists"
        )
    return mask, gram


def _stationarity_residual_l2(design, tv, wh, lam, sign) -> float:
    # Evaluated with the mask recomputed at the solution, not the teacher mask.
    X = design.entries
    m = X @ wh > 0.0
    resid = np.where(X @ tv > 0.0, X @ tv, 0.0) - np.where(m, X @ wh, 0.0)
    grad = X.T @ np.where(m, resid, 0.0)
    return float(np.linalg.norm(grad + sign * lam * design.n_samples * wh))


def _stationarity_residual_l1(design, tv, wh, lam, sign, teacher_bits) -> float:
    # The implicit equation is posed under the teacher mask; evaluate it there.
    X = design.entries
    zs = X @ tv
    resid = np.where(teacher_bits, zs - X @ wh, 0.0)
    grad = X.T @ resid
    reg = sign * lam * design.n_samples * np.abs(wh).sum() * np.sign(wh)
    return float(np.linalg.norm(grad + reg))


def solve_optimum_l2(design: Design, teacher_w: Weights, lam: float,
                     convention: Convention = "corrected") -> SolverReport:
    """Solve the l2-regularized stationarity equation under the teacher mask.

    Direct linear solve of (X^T D* X -+ lam N I) w = X^T D* X w*, minus sign
    for the paper convention, plus for the corrected one.  The residual is
    re-evaluated with the mask recomputed at the solution, and
    ``mask_consistent`` records whether that mask still equals the teacher's.
    """
    tv = _as_values(teacher_w)
    if lam < 0.0 or not np.isfinite(lam):
        raise ValueError("lambda must be finite and nonnegative")
    mask, gram = _require_pd_gram(design, tv)
    sign = 1.0 if convention == "paper" else -1.0
    n = design.n_samples
    d = design.n_features
    system = gram.matrix - sign * lam * n * np.eye(d)
    wh = np.linalg.solve(system, gram.matrix @ tv)
    consistent = bool(np.array_equal(design.entries @ wh > 0.0, mask.bits))
    residual = _stationarity_residual_l2(design, tv, wh, lam, sign)
    return SolverReport(kind="l2", optimum=optimum_vector(wh), residual=residual,
                        mask_consistent=consistent, iterations=1, lambda_used=lam,
                        convention=convention)


def solve_optimum_l1(design: Design, teacher_w: Weights, lam: float,
                     convention: Convention = "corrected",
                     max_iterations: int = 50, tol: float = 1e-10) -> SolverReport:
    """Newton solve of the implicit l1 stationarity equation.

    Parameters
    ----------
    design, teacher_w : the problem instance; the teacher mask is assumed
        at the solution, which ``mask_consistent`` then verifies.
    lam : regularization coefficient; small enough that the iteration stays
        within one sign pattern (violations are recorded, not hidden).
    convention : "paper" keeps the published sign of the regularization term
        in the stationarity equation; "corrected" flips it.
    max_iterations, tol : iteration budget and relative residual target
        (measured against |X^T D* X w*|).

    Starts from the teacher vector (the lam = 0 solution).  Raises
    ``NewtonConvergenceError`` on a singular Jacobian or exhausted budget.
    """
    tv = _as_values(teacher_w)
    if lam < 0.0 or not np.isfinite(lam):
        raise ValueError("lambda must be finite and nonnegative")
    mask, gram = _require_pd_gram(design, tv)
    sign = 1.0 if convention == "paper" else -1.0
    n = design.n_samples
    G = gram.matrix
    b = G @ tv
    scale = float(np.linalg.norm(b))
    ref_signs = np.sign(tv)
    wh = tv.copy()
    sign_stable = True
    iterations = 0
    converged = False
    for iterations in range(1, max_iterations + 1):
        sg = np.sign(wh)
        if not np.array_equal(sg, ref_signs):
            sign_stable = False
        f = b - G @ wh + sign * lam * n * np.abs(wh).sum() * sg
        if np.linalg.norm(f) <= tol * scale:
            converged = True
            break
        jac = -G + sign * lam * n * np.outer(sg, sg)
        try:
            step = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            raise NewtonConvergenceError(f"singular Jacobian at iteration {iterations}") from exc
        wh = wh - step
    if not converged:
        raise NewtonConvergenceError(
            f"no convergence after {max_iterations} iterations "
            f"(residual {np.linalg.norm(f):.3e}, target {tol * scale:.3e})"
        )
    consistent = bool(np.array_equal(design.entries @ wh > 0.0, mask.bits))
    residual = _stationarity_residual_l1(design, tv, wh, lam, sign, mask.bits)
    return SolverReport(kind="l1", optimum=optimum_vector(wh), residual=residual,
                        mask_consistent=consistent, iterations=iterations,
                        lambda_used=lam, convention=convention, sign_stable=sign_stable)


def lambda_bound_l2(design: Design, teacher_w: Weights) -> BoundReport:
    """Largest coefficient below which the l2 optimum keeps the teacher mask.

    (1/2N) min_i |（Xw*)_i| / |(X (X^T D* X)^-1 w*)_i|, the factor 2 absorbing
    higher-order terms of the perturbed inverse.
    """
    tv = _as_values(teacher_w)
    _, gram = _require_pd_gram(design, tv)
    X = design.entries
    zs = X @ tv
    if np.abs(zs).min() < 1e-12:
        raise ValueError("teacher pre-activations contain a (near-)zero entry")
    den = np.abs(X @ np.linalg.solve(gram.matrix, tv))
    with np.errstate(divide="ignore"):
        ratios = np.where(den > 0.0, np.abs(zs) / den, np.inf)
    return BoundReport(bound_primary=float(ratios.min() / (2.0 * design.n_samples)))


def lambda_bound_l1(design: Design, teacher_w: Weights,
                    opt: Union[SolverReport, WeightVector, np.ndarray]) -> BoundReport:
    """Admissibility thresholds for the l1 coefficient.

    The first-order direction of the optimum is estimated from the supplied
    solve (typically the lam = 0 solution, i.e. the teacher itself) as
    u = +-N |w|_1 (X_delta^T X_delta)^-1 sign(w), the sign following the
    solve's convention.  ``bound_primary`` guards every design row,
    ``bound_positive_only`` only the rows active under the teacher (the
    published variant; it provably misses sign flips of inactive rows), and
    ``bound_explicit`` replaces |（Xu)_i| by its worst case over rows.

    Requires strictly more active rows than features.
    """
    tv = _as_values(teacher_w)
    mask, gram = _require_pd_gram(design, tv)
    if not mask.n_active > design.n_features:
        raise DegenerateMaskError(
            f"need more active rows than features ({mask.n_active} <= {design.n_features})"
        )
    if isinstance(opt, SolverReport):
        wh = opt.optimum.values
        sign = 1.0 if opt.convention == "paper" else -1.0
    else:
        wh = _as_values(opt)
        sign = -1.0
    n = design.n_samples
    X = design.entries
    u = sign * n * np.abs(wh).sum() * np.linalg.solve(gram.matrix, np.sign(wh))
    zs = X @ tv
    if np.abs(zs).min() < 1e-12:
        raise ValueError("teacher pre-activations contain a (near-)zero entry")
    xu = np.abs(X @ u)
    with np.errstate(divide="ignore"):
        ratios = np.where(xu > 0.0, np.abs(zs) / xu, np.inf)
    primary = 0.5 * float(ratios.min())
    pos = zs > 0.0
    positive_only = 0.5 * float(ratios[pos].min())
    # Worst-case |(Xu)_i| via the max absolute row sum of X (X_delta^T X_delta)^-1.
    rows = np.linalg.solve(gram.matrix, X.T).T
    inf_norm = float(np.abs(rows).sum(axis=1).max())
    explicit = float(zs[pos].min()) / (4.0 * n * float(np.abs(tv).sum()) * inf_norm)
    return BoundReport(bound_primary=primary, bound_explicit=explicit,
                       bound_positive_only=positive_only, u_estimate=u)


def lyapunov_matrices(theta: float) -> tuple:
    """The 2x2 quadratic-form matrices driving the Lyapunov rate at angle theta.

    Returns (M, P1): M is the unregularized part, certified positive definite
    on (0, pi/2]; P1 is the l2 contribution under the paper sign convention
    (callers negate it for the corrected convention).
    """
    if not 0.0 < theta <= np.pi:
        raise ValueError(f"theta must lie in (0, pi], got {theta}")
    two_pi = 2.0 * np.pi
    off = -(two_pi - theta) * np.cos(theta) - np.sin(theta)
    m = np.array([[two_pi, off], [off, np.sin(2.0 * theta) + two_pi - 2.0 * theta]])
    m /= 2.0 * two_pi
    p1 = -np.array([[1.0, -np.cos(theta) / 2.0], [-np.cos(theta) / 2.0, 0.0]])
    return m, p1


def vdot(w: Weights, opt: Union[SolverReport, WeightVector, np.ndarray],
         teacher_w: Weights, reg: Regularizer) -> float:
    """Lyapunov time-derivative (w - w_opt) . expected_step(w), negative where
    the population flow contracts toward the optimum."""
    v = _as_values(w)
    wh = opt.optimum.values if isinstance(opt, SolverReport) else _as_values(opt)
    return float((v - wh) @ expected_step(teacher_w, v, reg))


def lyapunov_eval(w: Weights, opt: Union[SolverReport, WeightVector, np.ndarray],
                  teacher_w: Weights, reg: Regularizer) -> LyapunovEval:
    """Bundle the stability matrices, rate, and polar data at a single point."""
    v = _as_values(w)
    tv = _as_values(teacher_w)
    pair = polar(v, tv)
    m, p1 = lyapunov_matrices(pair.theta)
    rate = vdot(v, opt, tv, reg)
    return LyapunovEval(m_matrix=m, p1_matrix=p1, vdot=rate, theta=pair.theta,
                        y=(float(np.linalg.norm(v)), float(np.linalg.norm(tv))))
