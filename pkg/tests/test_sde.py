"""Forward simulation: stepping rule, reproducibility, moment and hypothesis reports."""

import numpy as np
import pytest

from pathhjb import (CoefficientSet, ConstantControl, ControlSet, DiscretePath,
                     ExplorationControl, FeedbackControl, ScheduleControl,
                     TrajectoryBatch, moment_bound_report, simulate_forward,
                     validate_hypotheses, zero_path)
from pathhjb.problems import make_problem


def brownian_coeffs(horizon=1.0):
    return CoefficientSet(
        dim=1, noise_dim=1,
        F=lambda pb, u: np.zeros((pb.n_paths, 1)),
        G=lambda pb, u: np.ones((pb.n_paths, 1, 1)),
        q=lambda pb, y, z, u: np.zeros(pb.n_paths),
        phi=lambda pb: pb.endpoint[:, 0],
        horizon=horizon, lipschitz_L=1.0)


SINGLETON = ControlSet((0.0,))


class TestSimulate:
    def test_frozen_dynamics_extend_the_initial_path(self):
        coeffs = make_problem("P1_frozen").coeffs
        init = DiscretePath(np.array([0.0, 0.7]), 0.25, continuous_origin=True)
        batch = simulate_forward(coeffs, init, ConstantControl(SINGLETON), 16, seed=1)
        assert np.all(batch.values[:, 1:, 0] == 0.7)

    def test_unit_drift_reaches_one(self):
        coeffs = CoefficientSet(
            dim=1, noise_dim=1,
            F=lambda pb, u: np.ones((pb.n_paths, 1)),
            G=lambda pb, u: np.zeros((pb.n_paths, 1, 1)),
            q=lambda pb, y, z, u: np.zeros(pb.n_paths),
            phi=lambda pb: pb.endpoint[:, 0], horizon=1.0)
        batch = simulate_forward(coeffs, zero_path(1, 1 / 8, 1),
                                 ConstantControl(SINGLETON), 4, seed=2)
        assert np.allclose(batch.values[:, -1, 0], 1.0, atol=1e-12)

    def test_brownian_moments(self):
        batch = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 16, 1),
                                 ConstantControl(SINGLETON), 10000, seed=3)
        xt = batch.values[:, -1, 0]
        assert abs(xt.mean()) <= 3 * xt.std() / 100
        assert abs(xt.var() - 1.0) <= 0.1

    def test_prefix_preserved_exactly(self):
        init = DiscretePath(np.array([0.0, -0.3, 0.8]), 0.25, continuous_origin=True)
        batch = simulate_forward(brownian_coeffs(), init, ConstantControl(SINGLETON),
                                 32, seed=4)
        assert np.all(batch.values[:, :3, 0] == init.values[:, 0])

    def test_rademacher_noise_two_point(self):
        batch = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 4, 1),
                                 ConstantControl(SINGLETON), 64, seed=5,
                                 noise="rademacher")
        inc = batch.increments
        assert set(np.unique(np.round(inc, 12))) == {-0.5, 0.5}

    def test_nonfinite_coefficient_raises(self):
        bad = CoefficientSet(
            dim=1, noise_dim=1,
            F=lambda pb, u: np.full((pb.n_paths, 1), np.nan),
            G=lambda pb, u: np.zeros((pb.n_paths, 1, 1)),
            q=lambda pb, y, z, u: np.zeros(pb.n_paths),
            phi=lambda pb: pb.endpoint[:, 0], horizon=1.0)
        with pytest.raises(FloatingPointError, match="F"):
            simulate_forward(bad, zero_path(1, 0.5, 1), ConstantControl(SINGLETON),
                             2, seed=0)


class TestReproducibility:
    def test_same_seed_bit_identical(self):
        a = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                             ConstantControl(SINGLETON), 64, seed=11)
        b = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                             ConstantControl(SINGLETON), 64, seed=11)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.increments, b.increments)

    def test_trajectories_independent_of_batch_size(self):
        small = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                                 ConstantControl(SINGLETON), 8, seed=11)
        big = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                               ConstantControl(SINGLETON), 32, seed=11)
        assert np.array_equal(small.values, big.values[:8])

    def test_worker_count_irrelevant(self):
        controls = ControlSet((-1.0, 1.0))
        coeffs = make_problem("P2_drift_control").coeffs
        explore = ExplorationControl(controls, seed=7, n_steps=8)
        a = simulate_forward(coeffs, zero_path(1, 1 / 8, 1), explore, 101, seed=7,
                             workers=1)
        explore2 = ExplorationControl(controls, seed=7, n_steps=8)
        b = simulate_forward(coeffs, zero_path(1, 1 / 8, 1), explore2, 101, seed=7,
                             workers=3)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.control_indices, b.control_indices)

    def test_flow_restart_consistency(self):
        # restarting from each realized prefix with the same increment tail
        # reproduces the straight-through simulation exactly
        coeffs = make_problem("P4_multiplicative").coeffs
        init = DiscretePath(np.array([1.0]), 1 / 8)
        full = simulate_forward(coeffs, init, ConstantControl(SINGLETON), 8, seed=13)
        k_cut = 4
        for i in range(4):
            prefix = DiscretePath(full.values[i, : k_cut + 1].copy(), 1 / 8)
            tail = full.increments[i:i + 1, k_cut:, :]
            restart = simulate_forward(coeffs, prefix, ConstantControl(SINGLETON),
                                       1, seed=999, increments=tail)
            assert np.array_equal(restart.values[0], full.values[i])

    def test_monotone_stability_under_refinement(self):
        coeffs = make_problem("P4_multiplicative").coeffs
        ratios = []
        for n in (8, 16):
            a0 = DiscretePath(np.array([1.0]), 1 / n)
            b0 = DiscretePath(np.array([1.2]), 1 / n)
            ba = simulate_forward(coeffs, a0, ConstantControl(SINGLETON), 4000, seed=17)
            bb = simulate_forward(coeffs, b0, ConstantControl(SINGLETON), 4000, seed=17)
            gap = np.abs(ba.values - bb.values).max(axis=(1, 2))
            ratios.append(float(np.mean(gap**2)) / (1.2 - 1.0) ** 2)
        # empirical constant stays bounded and stable as the grid refines
        assert ratios[0] < 10 and ratios[1] < 10
        assert abs(ratios[1] - ratios[0]) <= 0.5 * max(ratios)


class TestControls:
    def test_schedule(self):
        controls = ControlSet((-1.0, 1.0))
        coeffs = make_problem("P2_drift_control").coeffs
        # P2's control set is (-1, 0, 1); build a matching schedule
        sched = ScheduleControl(make_problem("P2_drift_control").controls, [2, 0, 2, 0])
        batch = simulate_forward(coeffs, zero_path(1, 0.25, 1), sched, 4, seed=19)
        assert np.array_equal(batch.control_indices[0], [2, 0, 2, 0])

    def test_feedback_sees_only_prefix(self):
        seen = []

        def rule(pb, k):
            seen.append(pb.node_count)
            return np.zeros(pb.n_paths, dtype=np.int64)

        batch = simulate_forward(brownian_coeffs(), zero_path(1, 0.25, 1),
                                 FeedbackControl(SINGLETON, rule), 4, seed=23)
        assert seen == [1, 2, 3, 4]
        assert batch.n_steps == 4

    def test_feedback_index_validation(self):
        bad = FeedbackControl(SINGLETON, lambda pb, k: np.full(pb.n_paths, 5))
        with pytest.raises(ValueError, match="control set"):
            simulate_forward(brownian_coeffs(), zero_path(1, 0.25, 1), bad, 2, seed=0)

    def test_control_set_validation(self):
        with pytest.raises(ValueError, match="nonempty"):
            ControlSet(())
        with pytest.raises(ValueError, match="symmetric"):
            ControlSet((0.0, 1.0), metric=lambda a, b: a - b)


class TestHypothesisValidator:
    def test_zero_coefficients_pass(self):
        coeffs = CoefficientSet(
            dim=1, noise_dim=1,
            F=lambda pb, u: np.zeros((pb.n_paths, 1)),
            G=lambda pb, u: np.zeros((pb.n_paths, 1, 1)),
            q=lambda pb, y, z, u: np.zeros(pb.n_paths),
            phi=lambda pb: np.zeros(pb.n_paths), horizon=1.0, lipschitz_L=1.0)
        rep = validate_hypotheses(coeffs, SINGLETON, probes=32, seed=1)
        assert rep.passed
        assert all(r == 0.0 for r in rep.ratios.values())

    def test_projection_terminal_passes(self):
        rep = validate_hypotheses(brownian_coeffs(), SINGLETON, probes=32, seed=2)
        assert rep.passes("terminal_lipschitz")
        assert rep.ratios["terminal_lipschitz"] <= 1.0 + 1e-9

    def test_quadratic_terminal_fails_any_L(self):
        coeffs = CoefficientSet(
            dim=1, noise_dim=1,
            F=lambda pb, u: np.zeros((pb.n_paths, 1)),
            G=lambda pb, u: np.zeros((pb.n_paths, 1, 1)),
            q=lambda pb, y, z, u: np.zeros(pb.n_paths),
            phi=lambda pb: pb.endpoint[:, 0] ** 2, horizon=1.0, lipschitz_L=1.0)
        rep = validate_hypotheses(coeffs, SINGLETON, probes=32, seed=3)
        assert not rep.passes("terminal_lipschitz")

    def test_drift_without_state_decay_fails_growth(self):
        # a constant drift cannot satisfy |F| <= L * sup-norm at the zero path
        p2 = make_problem("P2_drift_control")
        rep = validate_hypotheses(p2.coeffs, p2.controls, probes=32, seed=4)
        assert not rep.passes("coefficient_growth")
        assert rep.passes("coefficient_lipschitz")

    def test_state_proportional_diffusion_passes_growth(self):
        p4 = make_problem("P4_multiplicative")
        rep = validate_hypotheses(p4.coeffs, p4.controls, probes=32, seed=5)
        assert rep.passes("coefficient_growth")

    def test_h_growth_section_optional(self):
        rep = validate_hypotheses(brownian_coeffs(), SINGLETON, probes=16, seed=6,
                                  include_h_growth=True)
        assert "h_norm_growth" in rep.ratios


class TestMomentReport:
    def test_frozen_ratio_below_one(self):
        coeffs = make_problem("P1_frozen").coeffs
        init = DiscretePath(np.array([0.0, 0.7]), 0.25, continuous_origin=True)
        rep = moment_bound_report(coeffs, init, ConstantControl(SINGLETON), 2, 256, seed=1)
        assert rep.growth_ratio == pytest.approx(0.7**2 / (1 + 0.7**2))

    def test_brownian_second_moment_within_doob_bound(self):
        rep = moment_bound_report(brownian_coeffs(), zero_path(1, 1 / 16, 1),
                                  ConstantControl(SINGLETON), 2, 4000, seed=2)
        # E sup |W|^2 over [0,1] is below the Doob bound 4 E W(1)^2 = 4
        assert 1.0 <= rep.growth_ratio <= 4.0 * 1.1
        assert rep.increment_max_ratio > 0

    def test_se_halves_when_paths_quadruple(self):
        r1 = moment_bound_report(brownian_coeffs(), zero_path(1, 1 / 16, 1),
                                 ConstantControl(SINGLETON), 2, 2000, seed=3)
        r2 = moment_bound_report(brownian_coeffs(), zero_path(1, 1 / 16, 1),
                                 ConstantControl(SINGLETON), 2, 8000, seed=3)
        assert r1.growth_ratio_se / r2.growth_ratio_se == pytest.approx(2.0, rel=0.2)

    def test_exponent_validation(self):
        with pytest.raises(ValueError):
            moment_bound_report(brownian_coeffs(), zero_path(1, 0.5, 1),
                                ConstantControl(SINGLETON), 3, 8, seed=0)


class TestBallExitSmoke:
    def test_exit_frequency_shrinks_with_horizon(self):
        # qualitative only: continuing a near-boundary ball path by Brownian
        # noise exits the Hölder ball less often over shorter horizons; on a
        # shared increment stream the exit events are nested in delta
        from pathhjb import (HolderBallSpec, holder_seminorm, in_holder_ball,
                             perturb, sample_ball_paths)

        spec = HolderBallSpec(alpha=0.45, mu=1.0, m0=1.0, t0=0.0)
        base = next(p for p in sample_ball_paths(spec, 40, 1, 1 / 32, 0.5, seed=91,
                                                 include_probes=False)
                    if p.node_count >= 9 and in_holder_ball(p, spec).ok)
        start = perturb(base, 0.3, spec)
        batch = simulate_forward(brownian_coeffs(), start, ConstantControl(SINGLETON),
                                 300, seed=17)
        k0 = batch.start_index
        freqs = []
        for kd in (2, 4, 8, 16):
            exceed = sum(
                holder_seminorm(DiscretePath(batch.values[i, : k0 + kd + 1].copy(),
                                             1 / 32), spec.alpha) > spec.mu
                for i in range(300))
            freqs.append(exceed / 300)
        assert all(a <= b for a, b in zip(freqs, freqs[1:]))
        assert freqs[0] < freqs[-1]


class TestSerialization:
    def test_npz_round_trip(self, tmp_path):
        batch = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                                 ConstantControl(SINGLETON), 16, seed=29)
        f = str(tmp_path / "batch.npz")
        batch.to_npz(f)
        back = TrajectoryBatch.from_npz(f)
        assert np.array_equal(back.values, batch.values)
        assert np.array_equal(back.increments, batch.increments)
        assert back.step == batch.step
        assert back.seed == batch.seed
        assert back.version == 1

    def test_npz_bytes_deterministic(self, tmp_path):
        batch = simulate_forward(brownian_coeffs(), zero_path(1, 1 / 8, 1),
                                 ConstantControl(SINGLETON), 16, seed=29)
        f1, f2 = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
        batch.to_npz(f1)
        batch.to_npz(f2)
        assert open(f1, "rb").read() == open(f2, "rb").read()
