"""Built-in benchmarks: closed forms, solver agreement, one-step value recursion."""

import numpy as np
import pytest

from pathhjb import DiscretePath, analytic_value, make_problem, value_tree, zero_path
from pathhjb.batch import PathBatch


class TestMakeProblem:
    def test_frozen_value_is_current_state(self):
        spec = make_problem("P1_frozen")
        p = DiscretePath(np.array([0.0, -0.4, 1.7]), 0.25, continuous_origin=True)
        assert analytic_value(spec, p) == 1.7
        est = value_tree(spec.coeffs, p, spec.controls, 2)
        assert est.value == 1.7

    def test_drift_control_zero_start(self):
        spec = make_problem("P2_drift_control")
        assert analytic_value(spec, zero_path(1, 0.125, 1)) == 1.0
        est = value_tree(spec.coeffs, zero_path(1, 0.125, 1), spec.controls, 8)
        assert est.value == pytest.approx(1.0, abs=1e-12)

    def test_running_integral_zero_start(self):
        spec = make_problem("P3_running_integral")
        assert analytic_value(spec, zero_path(1, 0.125, 1)) == 0.5
        est = value_tree(spec.coeffs, zero_path(1, 0.125, 1), spec.controls, 8)
        # left-Riemann payoff discretization budget: T*h/2
        assert est.value == pytest.approx(0.5 - 1.0 * 0.125 / 2, abs=1e-12)

    def test_unknown_id_rejected(self):
        with pytest.raises(ValueError, match="unknown problem"):
            make_problem("P9_imaginary")


class TestAnalyticValue:
    def test_drift_control_interior(self):
        spec = make_problem("P2_drift_control")
        p = DiscretePath(np.array([0.0, 0.3]), 0.5, continuous_origin=True)
        assert analytic_value(spec, p) == pytest.approx(0.8)

    def test_running_integral_at_zero(self):
        spec = make_problem("P3_running_integral", horizon=1.0)
        assert analytic_value(spec, zero_path(1, 0.25, 1)) == pytest.approx(0.5)

    def test_martingale_problem(self):
        spec = make_problem("P4_multiplicative")
        p = DiscretePath(np.array([2.0]), 0.25)
        assert analytic_value(spec, p) == 2.0


class TestValueRecursion:
    """The closed forms satisfy the exact branch recursion over any restart gap.

    The drift-control form is exact; the running-integral form defers half a
    squared step per recursion step, the source of its T*h/2 tree budget.
    """

    @pytest.mark.parametrize("pid,defect", [("P2_drift_control", 0.0),
                                            ("P3_running_integral", -0.5)])
    def test_identity_at_random_state_and_gap(self, pid, defect):
        from pathhjb.control import _branch_increments, _tree_backward, _tree_step

        spec = make_problem(pid)
        h = 1.0 / 8
        rng = np.random.default_rng(31)
        for _ in range(100):
            k = int(rng.integers(1, 4))
            k_delta = int(rng.integers(1, 8 - k))
            vals = np.concatenate([[0.0], np.cumsum(rng.standard_normal(k)) * 0.2])
            p = DiscretePath(vals, h, continuous_origin=True)
            lhs = analytic_value(spec, p)
            dW = _branch_increments(1, h)
            levels = [np.asarray(p.values)[None, :, :]]
            for _ in range(k_delta):
                levels.append(_tree_step(spec.coeffs, levels[-1], h, spec.controls, dW))
            eta = np.array([analytic_value(spec, DiscretePath(leaf.copy(), h))
                            for leaf in levels[-1]])
            rhs = float(_tree_backward(spec.coeffs, spec.controls, levels, dW, h, eta)[0])
            assert rhs - lhs == pytest.approx(defect * k_delta * h**2, abs=1e-9)

    def test_every_closed_form_solves_the_equation(self):
        from pathhjb import classical_residual
        step = 1.0 / 1024
        n = 513
        probe = DiscretePath(0.2 * np.linspace(0, 0.5, n), step, continuous_origin=True)
        for pid in ("P1_frozen", "P2_drift_control", "P3_running_integral",
                    "P4_multiplicative"):
            spec = make_problem(pid)
            res = classical_residual(spec.analytic_handle(), spec.coeffs,
                                     spec.controls, probe)
            assert abs(res) <= 1e-3
