"""Backward solver: exactness shortcuts, oracles, semigroup, comparison, stability."""

import numpy as np
import pytest

from pathhjb import (CoefficientSet, ConstantControl, ControlSet, RegressionBasis,
                     SemigroupConfig, backward_semigroup, comparison_check,
                     simulate_forward, solve_bsde, stability_gap, zero_path)


SINGLETON = ControlSet((0.0,))


def brownian(horizon=1.0, q=None, phi=None):
    return CoefficientSet(
        dim=1, noise_dim=1,
        F=lambda pb, u: np.zeros((pb.n_paths, 1)),
        G=lambda pb, u: np.ones((pb.n_paths, 1, 1)),
        q=q or (lambda pb, y, z, u: np.zeros(pb.n_paths)),
        phi=phi or (lambda pb: pb.endpoint[:, 0]),
        horizon=horizon)


def make_batch(coeffs, n_steps, m, seed):
    return simulate_forward(coeffs, zero_path(1, coeffs.horizon / n_steps, 1),
                            ConstantControl(SINGLETON), m, seed)


class TestSolveBsde:
    def test_constant_terminal_exact(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 16, 512, seed=1)
        sol = solve_bsde(batch, None, lambda pb: np.full(pb.n_paths, 3.5))
        assert np.all(sol.Y == 3.5)
        assert np.all(sol.Z == 0.0)
        assert sol.std_error == 0.0

    def test_terminal_column_exact(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 256, seed=2)
        term = lambda pb: pb.endpoint[:, 0] ** 2
        sol = solve_bsde(batch, None, term)
        assert np.array_equal(sol.Y[:, -1], batch.values[:, -1, 0] ** 2)

    def test_linear_driver_exponential(self):
        drv = lambda pb, y, z, u: y
        one = lambda pb: np.ones(pb.n_paths)
        coeffs = brownian(q=drv, phi=one)
        batch = make_batch(coeffs, 64, 2000, seed=3)
        sol = solve_bsde(batch, drv, one)
        # the implicit one-iteration step gives (1+h)^N exactly here
        assert sol.y0 == pytest.approx((1 + 1 / 64) ** 64, abs=1e-12)
        assert abs(sol.y0 - np.e) / np.e <= 0.01

    def test_martingale_representation(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 50, 20000, seed=4)
        term = lambda pb: pb.endpoint[:, 0]
        sol = solve_bsde(batch, None, term, RegressionBasis(("endpoint",), degree=1))
        # Y tracks the state and the projection tracks the unit integrand
        assert np.max(np.abs(sol.Y - batch.values[:, :, 0])) <= 0.1
        step_means = sol.Z[:, :, 0].mean(axis=0)
        # per-step mean noise is sqrt(2/m); 0.04 covers the max over 50 steps
        assert np.max(np.abs(step_means - 1.0)) <= 0.04
        assert float(np.sqrt(np.mean((sol.Z - 1.0) ** 2))) <= 0.05
        assert np.max(np.abs(sol.Z - 1.0)) <= 0.5

    def test_explicit_mode_close_to_implicit(self):
        drv = lambda pb, y, z, u: y
        one = lambda pb: np.ones(pb.n_paths)
        coeffs = brownian(q=drv, phi=one)
        batch = make_batch(coeffs, 64, 500, seed=5)
        imp = solve_bsde(batch, drv, one, mode="implicit")
        exp = solve_bsde(batch, drv, one, mode="explicit")
        assert exp.y0 == pytest.approx(imp.y0, rel=1e-3)

    def test_refinement_consistency(self):
        drv = lambda pb, y, z, u: y
        one = lambda pb: np.ones(pb.n_paths)
        vals = {}
        for n in (64, 128):
            coeffs = brownian(q=drv, phi=one)
            batch = make_batch(coeffs, n, 200, seed=6)
            vals[n] = solve_bsde(batch, drv, one).y0
        assert abs(vals[64] - vals[128]) <= 1.0 * (1 / 64)

    def test_duplicate_features_pruned_not_fatal(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 256, seed=7)
        term = lambda pb: pb.endpoint[:, 0]
        dup = RegressionBasis(("endpoint", "endpoint"), degree=1, ridge=0.0)
        single = RegressionBasis(("endpoint",), degree=1, ridge=0.0)
        assert solve_bsde(batch, None, term, dup).y0 == pytest.approx(
            solve_bsde(batch, None, term, single).y0, abs=1e-10)

    def test_ill_conditioned_regression_names_step(self, monkeypatch):
        import pathhjb.bsde as bsde_mod

        monkeypatch.setattr(bsde_mod, "COND_LIMIT", 1.0)
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 64, seed=7)
        with pytest.raises(np.linalg.LinAlgError, match="step"):
            solve_bsde(batch, None, lambda pb: pb.endpoint[:, 0])

    def test_linearity_in_terminal(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 512, seed=8)
        f = lambda pb: pb.endpoint[:, 0]
        g = lambda pb: pb.running_integral[:, 0]
        rng = np.random.default_rng(9)
        for _ in range(5):
            a, b = rng.uniform(-2, 2, size=2)
            combo = lambda pb, a=a, b=b: a * f(pb) + b * g(pb)
            sol_c = solve_bsde(batch, None, combo)
            sol_f = solve_bsde(batch, None, f)
            sol_g = solve_bsde(batch, None, g)
            assert np.allclose(sol_c.Y, a * sol_f.Y + b * sol_g.Y, atol=1e-8)

    def test_empty_batch_rejected(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 4, 2, seed=1)
        batch.values = batch.values[:0]
        with pytest.raises(ValueError, match="empty"):
            solve_bsde(batch, None, lambda pb: pb.endpoint[:, 0])


class TestNestedOracle:
    def test_agrees_with_regression_solver(self):
        # regression-free route through a branch-sampled random tree
        from pathhjb.bsde import nested_bsde_value

        drv = lambda pb, y, z, u: 0.5 * y + 0.2 * z[:, 0]
        phi = lambda pb: pb.endpoint[:, 0]
        coeffs = brownian(q=drv, phi=phi)
        coeffs = CoefficientSet(**{**coeffs.__dict__, "lipschitz_L": 1.0})
        nest = nested_bsde_value(coeffs, zero_path(1, 1 / 6, 1), 0, SINGLETON, 6,
                                 branch=6, repeats=48, seed=3)
        batch = make_batch(coeffs, 6, 20000, seed=4)
        sol = solve_bsde(batch, drv, phi)
        assert abs(nest.value - sol.y0) <= 3 * np.hypot(nest.std_error, sol.std_error)

    def test_scale_guard(self):
        from pathhjb.bsde import nested_bsde_value

        coeffs = brownian()
        with pytest.raises(ValueError, match="n_steps <= 8"):
            nested_bsde_value(coeffs, zero_path(1, 1 / 16, 1), 0, SINGLETON, 16)


class TestContractionGuard:
    def test_coarse_step_with_large_lipschitz_rejected(self):
        from pathhjb import RegressionValueConfig, value_regression, value_tree

        drv = lambda pb, y, z, u: 3.0 * y
        coeffs = CoefficientSet(
            dim=1, noise_dim=1,
            F=lambda pb, u: np.zeros((pb.n_paths, 1)),
            G=lambda pb, u: np.ones((pb.n_paths, 1, 1)),
            q=drv, phi=lambda pb: pb.endpoint[:, 0], horizon=1.0, lipschitz_L=3.0)
        with pytest.raises(ValueError, match="contraction"):
            value_tree(coeffs, zero_path(1, 0.5, 1), SINGLETON, 2)
        with pytest.raises(ValueError, match="contraction"):
            value_regression(coeffs, zero_path(1, 0.5, 1), SINGLETON,
                             RegressionValueConfig(2, 64, seed=0))


class TestBackwardSemigroup:
    def test_driver_free_is_sample_mean(self):
        coeffs = brownian()
        initial = zero_path(1, 1 / 16, 1)
        eta = lambda pb: pb.endpoint[:, 0] ** 2
        cfg = SemigroupConfig(n_paths=2048, seed=10)
        est = backward_semigroup(coeffs, initial, ConstantControl(SINGLETON), 0.25,
                                 eta, cfg)
        batch = simulate_forward(
            CoefficientSet(dim=1, noise_dim=1, F=coeffs.F, G=coeffs.G, q=coeffs.q,
                           phi=eta, horizon=0.25), initial,
            ConstantControl(SINGLETON), 2048, seed=10)
        assert est.value == pytest.approx(float(eta(batch.terminal()).mean()), abs=1e-12)

    def test_constant_terminal_exact(self):
        coeffs = brownian()
        est = backward_semigroup(coeffs, zero_path(1, 1 / 16, 1),
                                 ConstantControl(SINGLETON), 0.5,
                                 lambda pb: np.full(pb.n_paths, 2.5),
                                 SemigroupConfig(n_paths=128, seed=11))
        assert est.value == 2.5
        assert est.std_error == 0.0

    def test_composition_consistency_with_full_solve(self):
        # the semigroup over the whole interval is the plain backward solve:
        # exactly so on shared noise, within noise on independent runs
        drv = lambda pb, y, z, u: 0.2 * y
        phi = lambda pb: pb.endpoint[:, 0]
        coeffs = brownian(q=drv, phi=phi)
        full = solve_bsde(make_batch(coeffs, 16, 8000, seed=12), drv, phi)
        shared = backward_semigroup(coeffs, zero_path(1, 1 / 16, 1),
                                    ConstantControl(SINGLETON), 1.0, phi,
                                    SemigroupConfig(n_paths=8000, seed=12))
        assert abs(full.y0 - shared.value) <= 1e-12
        indep = backward_semigroup(coeffs, zero_path(1, 1 / 16, 1),
                                   ConstantControl(SINGLETON), 1.0, phi,
                                   SemigroupConfig(n_paths=8000, seed=77))
        tol = 3 * np.hypot(full.std_error, indep.std_error)
        assert abs(full.y0 - indep.value) <= tol

    def test_horizon_guard(self):
        coeffs = brownian()
        with pytest.raises(ValueError, match="horizon"):
            backward_semigroup(coeffs, zero_path(1, 1 / 4, 1),
                               ConstantControl(SINGLETON), 1.25,
                               lambda pb: np.zeros(pb.n_paths))


class TestComparison:
    def test_equal_terminals_equal_solutions(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 512, seed=14)
        f = lambda pb: pb.endpoint[:, 0]
        rep = comparison_check(batch, None, f, f)
        assert rep.fraction_ok == 1.0
        assert rep.min_difference == 0.0

    def test_unit_shift_is_linear(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 16, 1024, seed=15)
        lo = lambda pb: pb.endpoint[:, 0]
        hi = lambda pb: pb.endpoint[:, 0] + 1.0
        sol_lo = solve_bsde(batch, None, lo)
        sol_hi = solve_bsde(batch, None, hi)
        # additive shifts survive the linear solves up to solve rounding
        assert np.max(np.abs(sol_hi.Y - sol_lo.Y - 1.0)) <= 1e-8

    def test_positive_part_dominates(self):
        # kinked gap: the fitted difference carries polynomial approximation
        # bias at the tails, so exact per-sample order is asserted only for
        # 95% of cells; per-step means respect the order within 3 SE
        coeffs = brownian()
        batch = make_batch(coeffs, 8, 1000, seed=16)
        lo = lambda pb: pb.endpoint[:, 0]
        hi = lambda pb: np.maximum(pb.endpoint[:, 0], 0.0)
        rep = comparison_check(batch, None, lo, hi)
        assert rep.fraction_ok >= 0.95
        sol_lo = solve_bsde(batch, None, lo)
        sol_hi = solve_bsde(batch, None, hi)
        d = sol_hi.Y - sol_lo.Y
        m = batch.n_paths
        step_means = d.mean(axis=0)
        step_se = d.std(axis=0, ddof=1) / np.sqrt(m)
        assert np.all(step_means >= -3 * step_se)

    def test_unordered_terminals_rejected(self):
        coeffs = brownian()
        batch = make_batch(coeffs, 4, 64, seed=17)
        lo = lambda pb: pb.endpoint[:, 0]
        hi = lambda pb: -pb.endpoint[:, 0]
        with pytest.raises(ValueError, match="dominate"):
            comparison_check(batch, None, lo, hi)


class TestStability:
    def build(self, m=2000, n=32, seed=18):
        drv1 = lambda pb, y, z, u: y
        drv2 = lambda pb, y, z, u: y + 0.2
        coeffs = brownian(q=drv1, phi=lambda pb: np.ones(pb.n_paths))
        batch = make_batch(coeffs, n, m, seed)
        s1 = solve_bsde(batch, drv1, lambda pb: np.ones(pb.n_paths))
        s2 = solve_bsde(batch, drv2, lambda pb: np.full(pb.n_paths, 1.3))
        return s1, s2, m, n

    def test_identical_solutions_trivially_pass(self):
        s1, _, m, n = self.build()
        rep = stability_gap(s1, s1, np.zeros(n), L=1.0, beta=8.0)
        assert rep.lhs == 0.0
        assert rep.passed

    def test_constant_gaps_pass_with_slack(self):
        s1, s2, m, n = self.build()
        rep = stability_gap(s1, s2, np.full(n, 0.2), L=1.0, beta=8.0, slack=0.1)
        assert rep.passed
        assert rep.rhs > rep.lhs

    def test_beta_threshold_enforced(self):
        s1, s2, m, n = self.build(m=200)
        with pytest.raises(ValueError, match="beta"):
            stability_gap(s1, s2, np.full(n, 0.2), L=1.0, beta=7.0)
