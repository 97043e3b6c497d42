"""Augmented path-space lift and the noise-path backward value."""

import numpy as np
import pytest

from pathhjb import (ConstantControl, ControlSet, DiscretePath, LiftedProblem,
                     RegressionValueConfig, bsde_value_functional, lift_coefficients,
                     shjb_value, simulate_forward, value_tree, zero_path)
from pathhjb.problems import make_problem

CONTROLS = ControlSet((-1.0, 0.0, 1.0))


def drift_control_lift(horizon=1.0):
    return LiftedProblem(
        dim_noise=1, dim_state=1,
        bar_F=lambda om, x, u: np.full((x.shape[0], 1), float(u)),
        bar_G=lambda om, x, u: np.ones((x.shape[0], 1, 1)),
        bar_q=lambda om, x, y, z, u: np.zeros(om.n_paths),
        bar_phi=lambda om, x: x[:, 0],
        horizon=horizon)


def noise_only_lift(bar_q=None, bar_phi=None, horizon=1.0):
    return LiftedProblem(
        dim_noise=1, dim_state=1,
        bar_F=lambda om, x, u: np.zeros((om.n_paths, 1)),
        bar_G=lambda om, x, u: np.zeros((om.n_paths, 1, 1)),
        bar_q=bar_q or (lambda om, x, y, z, u: np.zeros(om.n_paths)),
        bar_phi=bar_phi or (lambda om, x: om.endpoint[:, 0]),
        horizon=horizon)


class TestLiftCoefficients:
    def test_block_placement(self):
        lifted = lift_coefficients(drift_control_lift())
        assert lifted.dim == 2
        assert lifted.noise_dim == 1
        from pathhjb.batch import PathBatch
        pb = PathBatch(np.zeros((3, 2, 2)), 0.25)
        F = lifted.F(pb, 1.0)
        assert np.array_equal(F, np.array([[0.0, 1.0]] * 3))
        G = lifted.G(pb, 1.0)
        assert np.array_equal(G[0], np.array([[1.0], [1.0]]))

    def test_identity_block_reproduces_driving_noise(self):
        lp = noise_only_lift()
        lifted = lift_coefficients(lp)
        init = DiscretePath(np.zeros((1, 2)), 0.25)
        batch = simulate_forward(lifted, init, ConstantControl(CONTROLS, 1), 64, seed=4)
        replay = np.cumsum(batch.increments[:, :, 0], axis=1)
        assert np.array_equal(batch.values[:, 1:, 0], replay)

    def test_frozen_state_block_when_bar_g_zero(self):
        lp = noise_only_lift()
        lifted = lift_coefficients(lp)
        init = DiscretePath(np.array([[0.0, 0.7]]), 0.25)
        batch = simulate_forward(lifted, init, ConstantControl(CONTROLS, 1), 8, seed=5)
        assert np.all(batch.values[:, :, 1] == 0.7)


class TestShjbValue:
    def test_matches_unlifted_tree_exactly(self):
        est = shjb_value(drift_control_lift(), zero_path(1, 0.25, 1), np.array([0.3]),
                         CONTROLS, solver="tree", n_steps=4)
        p2 = make_problem("P2_drift_control")
        unlifted = value_tree(p2.coeffs, DiscretePath(np.array([0.3]), 0.25),
                              p2.controls, 4)
        assert est.value == unlifted.value

    def test_constant_payoff_singleton(self):
        lp = LiftedProblem(
            dim_noise=1, dim_state=1,
            bar_F=lambda om, x, u: np.zeros((om.n_paths, 1)),
            bar_G=lambda om, x, u: np.zeros((om.n_paths, 1, 1)),
            bar_q=lambda om, x, y, z, u: np.zeros(om.n_paths),
            bar_phi=lambda om, x: np.full(om.n_paths, 2.25),
            horizon=1.0)
        est = shjb_value(lp, zero_path(1, 0.25, 1), np.array([0.0]),
                         ControlSet((0.0,)), solver="tree", n_steps=4)
        assert est.value == 2.25

    def test_state_history_invariance(self):
        lp = drift_control_lift()
        rng = np.random.default_rng(0)
        omega = DiscretePath(
            np.concatenate([[0.0], np.cumsum(rng.standard_normal(2) * 0.3)]),
            0.25, continuous_origin=True)
        x = np.array([0.4])
        base = shjb_value(lp, omega, x, CONTROLS, solver="tree", n_steps=2)
        for k in range(5):
            hist = DiscretePath(np.concatenate([rng.standard_normal(2), x]), 0.25)
            alt = shjb_value(lp, omega, x, CONTROLS, solver="tree", n_steps=2,
                             xi_history=hist)
            assert alt.value == base.value

    def test_history_must_end_at_x(self):
        lp = drift_control_lift()
        hist = DiscretePath(np.array([0.0, 9.0]), 0.25)
        with pytest.raises(ValueError, match="end at x"):
            shjb_value(lp, zero_path(1, 0.25, 2), np.array([0.4]), CONTROLS,
                       solver="tree", n_steps=3, xi_history=hist)

    def test_regression_solver_route(self):
        est = shjb_value(drift_control_lift(), zero_path(1, 1.0 / 8, 1),
                         np.array([0.0]), CONTROLS, solver="regression", n_steps=8,
                         reg_cfg=RegressionValueConfig(8, 4000, seed=11))
        assert abs(est.value - 1.0) <= 0.05 + 3 * est.std_error


class TestBsdeValueFunctional:
    def test_martingale_identity(self):
        gamma = DiscretePath(np.array([0.0, 0.2, 0.45]), 0.25, continuous_origin=True)
        est = bsde_value_functional(noise_only_lift(), gamma, 10000, seed=21)
        assert abs(est.value - 0.45) <= 3 * est.std_error + 1e-12

    def test_constant_terminal_exact(self):
        lp = noise_only_lift(bar_phi=lambda om, x: np.full(om.n_paths, 1.25))
        est = bsde_value_functional(lp, zero_path(1, 0.25, 1), 256, seed=22)
        assert est.value == 1.25
        assert est.std_error == 0.0

    def test_exponential_oracle(self):
        lp = noise_only_lift(bar_q=lambda om, x, y, z, u: y,
                             bar_phi=lambda om, x: np.ones(om.n_paths))
        est = bsde_value_functional(lp, zero_path(1, 1.0 / 64, 1), 2000, seed=23)
        assert abs(est.value - np.e) / np.e <= 0.01

    def test_terminal_time_is_exact_payoff(self):
        gamma = DiscretePath(np.linspace(0, 0.5, 65), 1.0 / 64, continuous_origin=True)
        est = bsde_value_functional(noise_only_lift(), gamma, 64, seed=24)
        assert est.value == 0.5
        assert est.std_error == 0.0
