import numpy as np
import pytest

from reludyn import (
    DegenerateMaskError,
    Regularizer,
    activation_mask,
    lambda_bound_l1,
    lambda_bound_l2,
    lyapunov_eval,
    lyapunov_matrices,
    masked_gram,
    neumann_residual,
    no_regularizer,
    rank_tail_probability,
    sample_design,
    solve_optimum_l1,
    solve_optimum_l2,
    theoretical_probability,
    unit_ones_teacher,
    vdot,
)
from reludyn.model import Design


class TestRankTailProbability:
    def test_single_term(self):
        assert rank_tail_probability(10, 0) == pytest.approx(2.0 ** -10)

    def test_binomial_sum(self):
        # 1 + 10 + 45 active-count configurations out of 1024.
        assert rank_tail_probability(10, 2) == pytest.approx(56 / 1024)

    def test_full_sum_is_one(self):
        for n in (3, 10, 64, 200):
            assert rank_tail_probability(n, n) == 1.0

    def test_nondecreasing_in_k(self):
        values = [rank_tail_probability(12, k) for k in range(13)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            rank_tail_probability(10, 11)
        with pytest.raises(ValueError):
            rank_tail_probability(10, -1)

    def test_matches_monte_carlo_rank_frequency(self):
        t = unit_ones_teacher(5)
        hits = 0
        trials = 2000
        for seed in range(trials):
            d = sample_design(10, 5, seed=seed)
            if activation_mask(d, t).n_active <= 5:
                hits += 1
        assert hits / trials == pytest.approx(rank_tail_probability(10, 5), abs=0.03)


class TestTheoreticalProbability:
    # The nine distinct published (N, d) combinations, three-decimal targets.
    TABLE = {
        (10, 2): 0.425, (20, 2): 0.450, (100, 2): 0.450,
        (10, 3): 0.373, (20, 3): 0.449, (100, 3): 0.450,
        (10, 5): 0.170, (20, 5): 0.441, (100, 5): 0.450,
    }

    def test_reference_values_at_three_decimals(self):
        for (n, d), expected in self.TABLE.items():
            assert round(theoretical_probability(n, d, 0.1), 3) == expected

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            theoretical_probability(10, 2, 0.0)
        with pytest.raises(ValueError):
            theoretical_probability(10, 2, 1.0)


class TestMaskedGram:
    def test_all_false_mask(self):
        d = sample_design(8, 3, seed=0)
        mask = activation_mask(d, np.zeros(3))
        gram = masked_gram(d, mask)
        assert np.array_equal(gram.matrix, np.zeros((3, 3)))
        assert not gram.cholesky_ok and not gram.admissible

    def test_more_active_than_features_is_admissible(self):
        t = unit_ones_teacher(3)
        found = 0
        for seed in range(40):
            d = sample_design(20, 3, seed=seed)
            mask = activation_mask(d, t)
            if mask.n_active > 3:
                gram = masked_gram(d, mask)
                assert gram.cholesky_ok and gram.admissible
                found += 1
        assert found > 30

    def test_boundary_rank_is_definite_but_not_admissible(self):
        # Exactly d active rows: the Gram is a.s. positive definite, yet below
        # the margin the analysis certifies.
        t = unit_ones_teacher(4)
        for seed in range(3000):
            d = sample_design(9, 4, seed=seed)
            mask = activation_mask(d, t)
            if mask.n_active == 4:
                gram = masked_gram(d, mask)
                assert gram.cholesky_ok
                assert not gram.admissible
                return
        pytest.fail("no boundary-rank instance found")

    def test_cholesky_flag_matches_eigenvalues(self):
        rng = np.random.default_rng(44)
        t = unit_ones_teacher(3)
        for _ in range(200):
            n = int(rng.integers(4, 15))
            d = sample_design(n, 3, seed=int(rng.integers(1 << 30)))
            mask = activation_mask(d, t)
            gram = masked_gram(d, mask)
            evals = np.linalg.eigvalsh(gram.matrix)
            trace = max(float(np.trace(gram.matrix)), 0.0)
            spectral = bool(evals[0] > 1e-12 * trace / 3) and trace > 0
            assert gram.cholesky_ok == spectral


class TestNeumannResidual:
    def test_identity_scalar_value(self):
        # Closed form eps^2 / (1 - eps) on the identity.
        value = neumann_residual(np.eye(3), 0.01)
        assert value == pytest.approx(1e-4 / 0.99, rel=1e-9)

    def test_zero_epsilon(self):
        assert neumann_residual(np.eye(2), 0.0) == 0.0

    def test_second_order_scaling(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.standard_normal((4, 4))
            b = a @ a.T + 4.0 * np.eye(4)
            lam_min = np.linalg.eigvalsh(b)[0]
            eps = 1e-4 * lam_min
            ratio = neumann_residual(b, eps) / neumann_residual(b, eps / 2)
            assert 3.5 <= ratio <= 4.5

    def test_epsilon_too_large(self):
        with pytest.raises(ValueError):
            neumann_residual(np.eye(2), 1.5)

    def test_requires_positive_definite(self):
        with pytest.raises(ValueError):
            neumann_residual(np.diag([1.0, -1.0]), 0.01)


class TestSolveOptimumL2:
    def test_lambda_zero_returns_teacher(self):
        d = sample_design(20, 3, seed=1)
        t = unit_ones_teacher(3)
        report = solve_optimum_l2(d, t, 0.0)
        assert np.allclose(report.optimum.values, t.values, atol=1e-12)
        assert report.mask_consistent
        assert report.residual < 1e-12

    @pytest.mark.parametrize("convention,sign", [("corrected", 1.0), ("paper", -1.0)])
    def test_scalar_closed_form(self, convention, sign):
        # d = 1: the optimum is s / (s + lam N) w* (corrected) or
        # s / (s - lam N) w* (paper), with s the masked second moment.
        d = sample_design(12, 1, seed=3)
        t = np.array([2.0])
        mask = d.entries[:, 0] * t[0] > 0
        s = float((d.entries[mask, 0] ** 2).sum())
        lam = 0.02
        report = solve_optimum_l2(d, t, lam, convention)
        expected = s / (s + sign * lam * 12) * t
        assert np.allclose(report.optimum.values, expected, rtol=1e-12)

    def test_stationarity_residual_small_when_consistent(self):
        t = unit_ones_teacher(3)
        for seed in range(30):
            d = sample_design(20, 3, seed=seed)
            report = solve_optimum_l2(d, t, 0.005, "paper")
            if report.mask_consistent:
                assert report.residual <= 1e-9

    def test_degenerate_mask_raises(self):
        # All-negative teacher activations leave an empty mask.
        entries = -np.abs(np.random.default_rng(0).standard_normal((6, 2)))
        d = Design(entries, 6, 2, seed=0)
        with pytest.raises(DegenerateMaskError):
            solve_optimum_l2(d, unit_ones_teacher(2), 0.01)


class TestLambdaBoundL2:
    def test_scale_invariant_in_teacher(self):
        d = sample_design(20, 3, seed=5)
        t = unit_ones_teacher(3).values
        b1 = lambda_bound_l2(d, t).bound_primary
        b2 = lambda_bound_l2(d, 7.5 * t).bound_primary
        assert b1 == pytest.approx(b2, rel=1e-12)

    def test_scalar_case(self):
        d = sample_design(12, 1, seed=3)
        t = np.array([1.0])
        mask = d.entries[:, 0] > 0
        s = float((d.entries[mask, 0] ** 2).sum())
        assert lambda_bound_l2(d, t).bound_primary == pytest.approx(s / 24.0, rel=1e-12)

    def test_nine_tenths_of_bound_is_consistent(self):
        t = unit_ones_teacher(3)
        checked = 0
        seed = 0
        while checked < 100:
            d = sample_design(20, 3, seed=seed)
            seed += 1
            try:
                bound = lambda_bound_l2(d, t).bound_primary
            except DegenerateMaskError:
                continue
            checked += 1
            report = solve_optimum_l2(d, t, 0.9 * bound)
            assert report.mask_consistent

    def test_degenerate_raises(self):
        entries = -np.abs(np.random.default_rng(1).standard_normal((6, 2)))
        d = Design(entries, 6, 2, seed=0)
        with pytest.raises(DegenerateMaskError):
            lambda_bound_l2(d, unit_ones_teacher(2))


class TestSolveOptimumL1:
    def test_lambda_zero_single_iteration(self):
        d = sample_design(20, 3, seed=2)
        t = unit_ones_teacher(3)
        report = solve_optimum_l1(d, t, 0.0)
        assert np.array_equal(report.optimum.values, t.values)
        assert report.iterations == 1
        assert report.sign_stable

    @pytest.mark.parametrize("convention,sign", [("paper", -1.0), ("corrected", 1.0)])
    def test_scalar_closed_form(self, convention, sign):
        # d = 1, positive teacher: optimum = s w* / (s +- lam N).
        d = sample_design(12, 1, seed=3)
        t = np.array([1.5])
        mask = d.entries[:, 0] > 0
        s = float((d.entries[mask, 0] ** 2).sum())
        lam = 0.03
        report = solve_optimum_l1(d, t, lam, convention)
        expected = s * t / (s + sign * lam * 12)
        assert np.allclose(report.optimum.values, expected, rtol=1e-10)

    def test_residual_reevaluated_independently(self):
        # The reported residual must hold for the implicit stationarity
        # expression rebuilt from scratch at the returned optimum.
        t = unit_ones_teacher(3)
        for seed in range(20):
            d = sample_design(20, 3, seed=seed)
            try:
                report = solve_optimum_l1(d, t, 0.005, "corrected")
            except DegenerateMaskError:
                continue
            wh = report.optimum.values
            bits = d.entries @ t.values > 0
            gram = d.entries[bits].T @ d.entries[bits]
            f = gram @ t.values - gram @ wh - 0.005 * 20 * np.abs(wh).sum() * np.sign(wh)
            residual = np.linalg.norm(f)
            assert residual <= 1e-9
            assert residual == pytest.approx(report.residual, abs=1e-10)

    @pytest.mark.parametrize("convention", ["paper", "corrected"])
    def test_first_order_expansion_in_lambda(self, convention):
        # |what - w* - lam u| = O(lam^2) with u taken at the lam -> 0 limit.
        d = sample_design(20, 3, seed=11)
        t = unit_ones_teacher(3)
        ref = solve_optimum_l1(d, t, 0.0, convention)
        u = lambda_bound_l1(d, t, ref).u_estimate
        ratios = []
        for lam in (1e-4, 2e-4, 4e-4):
            wh = solve_optimum_l1(d, t, lam, convention).optimum.values
            ratios.append(np.linalg.norm(wh - t.values - lam * u) / lam ** 2)
        assert max(ratios) <= 2.0 * min(ratios) + 1e-9


class TestLambdaBoundL1:
    def test_explicit_below_positive_side_bound(self):
        # The closed-form bound is the conservative one.
        t = unit_ones_teacher(3)
        checked = 0
        seed = 0
        while checked < 100:
            d = sample_design(20, 3, seed=seed)
            seed += 1
            try:
                report = lambda_bound_l1(d, t, solve_optimum_l1(d, t, 0.0))
            except DegenerateMaskError:
                continue
            checked += 1
            assert report.bound_explicit <= report.bound_positive_only * 1.05
            assert report.bound_primary <= report.bound_positive_only + 1e-15

    def test_scale_invariant_in_teacher(self):
        d = sample_design(20, 3, seed=5)
        t = unit_ones_teacher(3).values
        r1 = lambda_bound_l1(d, t, solve_optimum_l1(d, t, 0.0))
        r2 = lambda_bound_l1(d, 3.0 * t, solve_optimum_l1(d, 3.0 * t, 0.0))
        assert r1.bound_primary == pytest.approx(r2.bound_primary, rel=1e-10)
        assert r1.bound_explicit == pytest.approx(r2.bound_explicit, rel=1e-10)

    def test_nine_tenths_of_bound_is_consistent(self):
        t = unit_ones_teacher(3)
        checked = consistent = 0
        seed = 0
        while checked < 100:
            d = sample_design(20, 3, seed=seed)
            seed += 1
            try:
                bound = lambda_bound_l1(d, t, solve_optimum_l1(d, t, 0.0)).bound_primary
            except DegenerateMaskError:
                continue
            checked += 1
            consistent += solve_optimum_l1(d, t, 0.9 * bound).mask_consistent
        assert consistent >= 99

    def test_requires_rank_margin(self):
        # Boundary-rank instance: solvable, but the bound needs n_active > d.
        t = unit_ones_teacher(4)
        for seed in range(3000):
            d = sample_design(9, 4, seed=seed)
            if activation_mask(d, t).n_active == 4:
                with pytest.raises(DegenerateMaskError):
                    lambda_bound_l1(d, t, solve_optimum_l1(d, t, 0.0))
                return
        pytest.fail("no boundary-rank instance found")


class TestLyapunovMatrices:
    def test_right_angle_values(self):
        m, p1 = lyapunov_matrices(np.pi / 2)
        quarter = 1.0 / (4.0 * np.pi)
        assert np.allclose(m, [[0.5, -quarter], [-quarter, 0.25]], atol=1e-15)
        assert np.allclose(p1, [[-1.0, 0.0], [0.0, 0.0]], atol=1e-15)

    def test_small_angle_limit_singular(self):
        m, _ = lyapunov_matrices(1e-9)
        limit = np.array([[0.5, -0.5], [-0.5, 0.5]])
        assert np.allclose(m, limit, atol=1e-6)
        assert abs(np.linalg.det(m)) < 1e-6

    def test_positive_definite_on_grid(self):
        for theta in np.linspace(0.001, np.pi / 2, 1000):
            m, _ = lyapunov_matrices(theta)
            evals = np.linalg.eigvalsh(m)
            assert evals[0] > 0.0

    def test_domain_validated(self):
        for bad in (0.0, -0.1, np.pi + 0.1):
            with pytest.raises(ValueError):
                lyapunov_matrices(bad)


class TestVdot:
    def test_zero_at_optimum(self):
        t = unit_ones_teacher(3)
        w = np.array([0.4, 0.5, 0.6])
        assert vdot(w, w, t, Regularizer("l2", 0.01)) == 0.0

    def test_matches_quadratic_form_without_penalty(self):
        # With the optimum at the teacher and lam = 0:
        # vdot(w) = -y' M y for y = (|w|, |w*|).
        rng = np.random.default_rng(19)
        for _ in range(300):
            d = int(rng.integers(2, 6))
            t = rng.standard_normal(d)
            w = rng.standard_normal(d)
            value = vdot(w, t, t, no_regularizer())
            ev = lyapunov_eval(w, t, t, no_regularizer())
            y = np.array(ev.y)
            assert value == pytest.approx(-y @ ev.m_matrix @ y, abs=1e-10)

    @pytest.mark.parametrize("kind", ["l1", "l2"])
    @pytest.mark.parametrize("convention", ["paper", "corrected"])
    def test_negative_inside_ball(self, kind, convention):
        # Frozen large-sample instance; points in the punctured teacher ball.
        d_feat = 3
        design = sample_design(100, d_feat, seed=77)
        t = unit_ones_teacher(d_feat)
        solve = solve_optimum_l2 if kind == "l2" else solve_optimum_l1
        report = solve(design, t, 0.01, convention)
        reg = Regularizer(kind, 0.01, convention)
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 1000:
            v = rng.standard_normal(d_feat)
            v /= np.linalg.norm(v)
            w = t.values + rng.random() ** (1.0 / d_feat) * v
            nw = np.linalg.norm(w)
            if nw < 1e-9 or abs(w @ t.values) / nw > 1.0 - 1e-12:
                continue
            checked += 1
            assert vdot(w, report, t, reg) < 0.0
