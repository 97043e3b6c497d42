"""Functional derivatives, the anchored squared-H time derivative, Ito residuals."""

import numpy as np
import pytest

from pathhjb import (ClassGSpec, ConstantControl, DiscretePath, FDConfig,
                     FunctionalHandle, class_g_time_derivative, horizontal_derivative,
                     ito_residual, second_vertical, simulate_forward, vertical_derivative,
                     zero_path)
from pathhjb.paths import random_walk_paths
from pathhjb.problems import make_problem


def ramp(n=5, step=0.25):
    return DiscretePath(np.linspace(0, step * (n - 1), n), step)


def left_integral(p: DiscretePath) -> float:
    return float(p.step * np.sum(p.values[:-1, 0])) if p.node_count > 1 else 0.0


ENDPOINT_SQ = FunctionalHandle(eval=lambda p: float(p.endpoint[0]) ** 2,
                               check_derivatives=False)
INTEGRAL = FunctionalHandle(eval=left_integral, check_derivatives=False)


class TestVerticalDerivative:
    def test_exact_on_endpoint_square(self):
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        assert vertical_derivative(ENDPOINT_SQ, p)[0] == pytest.approx(4.0, abs=1e-10)

    def test_integral_blind_to_endpoint(self):
        assert vertical_derivative(INTEGRAL, ramp())[0] == 0.0

    def test_product_rule_with_invisible_factor(self):
        f = FunctionalHandle(eval=lambda p: float(p.endpoint[0]) * left_integral(p),
                             check_derivatives=False)
        # gamma(s) = s on [0,1], N=4: left integral is 0.375
        assert vertical_derivative(f, ramp())[0] == pytest.approx(0.375, abs=1e-10)

    def test_forward_scheme(self):
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        cfg = FDConfig(scheme="forward", h_vertical=1e-6)
        assert vertical_derivative(ENDPOINT_SQ, p, cfg)[0] == pytest.approx(4.0, rel=1e-5)


class TestSecondVertical:
    def test_endpoint_square(self):
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        assert second_vertical(ENDPOINT_SQ, p)[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_linear_functional_vanishes(self):
        f = FunctionalHandle(eval=lambda p: 3.0 * float(p.endpoint[0]),
                             check_derivatives=False)
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        assert second_vertical(f, p)[0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_cross_product_term(self):
        f = FunctionalHandle(eval=lambda p: float(p.endpoint[0] * p.endpoint[1]),
                             dim=2, check_derivatives=False)
        p = DiscretePath(np.array([[0.0, 0.0], [1.2, -0.7]]), 0.5)
        out = second_vertical(f, p)
        assert out[0, 1] == pytest.approx(1.0, abs=1e-6)
        assert out[0, 0] == pytest.approx(0.0, abs=1e-6)
        assert np.array_equal(out, out.T)


class TestHorizontalDerivative:
    def test_running_integral_rate_is_endpoint(self):
        assert horizontal_derivative(INTEGRAL, ramp()) == pytest.approx(1.0, abs=0)

    def test_endpoint_functional_frozen(self):
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        assert horizontal_derivative(ENDPOINT_SQ, p) == 0.0

    def test_time_linear(self):
        f = FunctionalHandle(eval=lambda p: p.t * float(p.endpoint[0]),
                             check_derivatives=False)
        p = DiscretePath(np.array([0.0, 2.0]), 0.5)
        assert horizontal_derivative(f, p) == pytest.approx(2.0, rel=1e-12)

    def test_horizon_guard(self):
        with pytest.raises(ValueError, match="horizon"):
            horizontal_derivative(INTEGRAL, ramp(5, 0.25), horizon=1.0)


class TestHandleConsistencyCheck:
    def test_correct_derivatives_accepted(self):
        FunctionalHandle(eval=lambda p: float(p.endpoint[0]) ** 2,
                         dx=lambda p: 2.0 * p.endpoint,
                         dxx=lambda p: np.full((1, 1), 2.0))

    def test_wrong_gradient_rejected(self):
        with pytest.raises(ValueError, match="dx"):
            FunctionalHandle(eval=lambda p: float(p.endpoint[0]) ** 2,
                             dx=lambda p: 3.0 * p.endpoint)


class TestClassG:
    def test_squared_gap_to_zero_anchor(self):
        spec = ClassGSpec(g0=lambda t, y: y, g0_t=lambda t, y: 0.0,
                          g0_y=lambda t, y: 1.0, anchor=zero_path(1, 0.25, 1))
        assert class_g_time_derivative(spec, ramp()) == pytest.approx(1.0)

    def test_constant_g0(self):
        spec = ClassGSpec(g0=lambda t, y: 7.0, g0_t=lambda t, y: 0.0,
                          g0_y=lambda t, y: 0.0, anchor=zero_path(1, 0.25, 1))
        assert class_g_time_derivative(spec, ramp()) == 0.0

    def test_inconsistent_partials_rejected(self):
        with pytest.raises(ValueError, match="finite differences"):
            ClassGSpec(g0=lambda t, y: t + y, g0_t=lambda t, y: 5.0,
                       g0_y=lambda t, y: 1.0, anchor=zero_path(1, 0.25, 1))

    def test_matches_one_sided_difference(self):
        # bilinear g0 keeps the O(h) difference error below 1e-4 relative
        step = 1.0 / 2048
        anchor = zero_path(1, step, 1)
        spec = ClassGSpec(g0=lambda t, y: 1.0 + 0.5 * t + 2.0 * y + 0.1 * t * y,
                          g0_t=lambda t, y: 0.5 + 0.1 * y,
                          g0_y=lambda t, y: 2.0 + 0.1 * t, anchor=anchor)
        handle = FunctionalHandle(eval=spec.value, check_derivatives=False)
        for p in random_walk_paths(100, 1, step, 1537, seed=42, scale=0.5):
            closed = class_g_time_derivative(spec, p)
            fd = horizontal_derivative(handle, p)
            assert abs(closed - fd) / max(1.0, abs(closed), abs(fd)) <= 1e-4

    def test_anchor_extension_in_gap(self):
        # anchor frozen beyond its own final time before the gap is measured
        anchor = DiscretePath(np.array([0.0, 0.5]), 0.25, continuous_origin=True)
        spec = ClassGSpec(g0=lambda t, y: y, g0_t=lambda t, y: 0.0,
                          g0_y=lambda t, y: 1.0, anchor=anchor)
        p = DiscretePath(np.array([0.0, 0.5, 0.5, 0.5, 2.5]), 0.25)
        # gap path is zero except the last node, invisible to the left sum,
        # so the derivative is the endpoint gap squared
        assert class_g_time_derivative(spec, p) == pytest.approx((2.5 - 0.5) ** 2)


BATCH_SQ = FunctionalHandle(
    eval=lambda p: float(p.endpoint[0]) ** 2,
    batch_eval=lambda pb: pb.endpoint[:, 0] ** 2,
    batch_dt=lambda pb: np.zeros(pb.n_paths),
    batch_dx=lambda pb: 2.0 * pb.endpoint,
    batch_dxx=lambda pb: np.full((pb.n_paths, 1, 1), 2.0),
    check_derivatives=False)


class TestItoResidual:
    def brownian_batch(self, n_steps, m, seed):
        spec = make_problem("P2_drift_control")
        still = ConstantControl(spec.controls, 1)
        return spec.coeffs, simulate_forward(
            spec.coeffs, zero_path(1, 1.0 / n_steps, 1), still, m, seed)

    def test_squared_endpoint_mean_zero(self):
        coeffs, batch = self.brownian_batch(64, 4000, seed=8)
        st = ito_residual(BATCH_SQ, coeffs, batch)
        assert abs(st.mean) <= 3 * st.std_error

    def test_constant_functional_exact_zero(self):
        coeffs, batch = self.brownian_batch(8, 50, seed=8)
        const = FunctionalHandle(eval=lambda p: 4.2, check_derivatives=False)
        st = ito_residual(const, coeffs, batch)
        assert st.mean == 0.0 and st.rms == 0.0

    def test_rms_shrinks_with_step(self):
        rms = []
        for n in (32, 64, 128):
            coeffs, batch = self.brownian_batch(n, 3000, seed=15)
            rms.append(ito_residual(BATCH_SQ, coeffs, batch).rms)
        slope = np.polyfit(np.log([1 / 32, 1 / 64, 1 / 128]), np.log(rms), 1)[0]
        assert slope >= 0.4

    def test_per_path_fallback_matches_batch(self):
        coeffs, batch = self.brownian_batch(8, 40, seed=21)
        st_batch = ito_residual(BATCH_SQ, coeffs, batch)
        st_loop = ito_residual(ENDPOINT_SQ, coeffs, batch)
        assert st_loop.mean == pytest.approx(st_batch.mean, abs=1e-8)


class TestFDConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            FDConfig(h_vertical=-1.0)
        with pytest.raises(ValueError):
            FDConfig(n_horizontal_steps=0)
        with pytest.raises(ValueError):
            FDConfig(scheme="sideways")
