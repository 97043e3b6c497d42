"""Classical and viscosity checks for candidate solutions of the control equation.

classical_residual evaluates the time derivative plus the Hamiltonian at a
path.  viscosity_test samples a compact Hölder ball, locates the extremum
of candidate-minus-test (or plus, on the supersolution side), recentres the
test functional so the extremal gap is zero, and evaluates the one-sided
residual there.  Sampling can refute, never certify: reports state how many
samples found no counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .calculus import FDConfig, FunctionalHandle, _analytic_or_fd
from .control import HamiltonianInput, hamiltonian
from .paths import DiscretePath, HolderBallSpec, h_norm_sq, sample_ball_paths
from .sde import CoefficientSet, ControlSet

__all__ = [
    "ViscosityTestReport",
    "classical_residual",
    "viscosity_test",
    "mu_limit_sweep",
    "quadratic_penalty",
    "penalty_test_functional",
    "terminal_condition_check",
]


@dataclass(frozen=True)
class ViscosityTestReport:
    side: str
    interior: bool
    residual: Optional[float]
    passed: Optional[bool]
    maximizer: Optional[DiscretePath]
    extremal_gap: float
    terminal_ok: bool
    worst_terminal_gap: float
    n_samples: int
    mu: float

    def to_json_dict(self) -> dict:
        return {
            "side": self.side,
            "interior": self.interior,
            "residual": self.residual,
            "passed": self.passed,
            "extremal_gap": self.extremal_gap,
            "terminal_ok": self.terminal_ok,
            "worst_terminal_gap": self.worst_terminal_gap,
            "n_samples": self.n_samples,
            "mu": self.mu,
        }


def classical_residual(V: FunctionalHandle, coeffs: CoefficientSet, controls: ControlSet,
                       p_path: DiscretePath, cfg: FDConfig = FDConfig()) -> float:
    """Time derivative of V plus the Hamiltonian at the path.

    Zero (within the finite-difference budget) at every interior path is
    the pointwise statement that V solves the equation classically.  The
    horizontal difference needs one grid step of room below the horizon.
    """
    val, dt, dx, dxx = _analytic_or_fd(V, p_path, cfg)
    ham, _ = hamiltonian(coeffs, p_path, HamiltonianInput(val, dx, 0.5 * (dxx + dxx.T)),
                         controls)
    return float(dt + ham)


def quadratic_penalty(anchor: DiscretePath, weight: float = 1.0) -> FunctionalHandle:
    """Penalty |p(t) - anchor(t_hat)|^2 + squared-H gap to the frozen anchor.

    Nonnegative, zero exactly on the anchor and its frozen extensions; its
    derivatives at paths at least as long as the anchor are analytic: the
    H term is invisible to endpoint bumps, freezing adds the squared
    endpoint gap per unit time, and the endpoint term has Hessian 2I.
    """
    a_end = anchor.values[-1]

    def gap_sq(p: DiscretePath) -> float:
        n = max(p.node_count, anchor.node_count)
        pv = np.concatenate([p.values, np.repeat(p.values[-1:], n - p.node_count, axis=0)])
        av = np.concatenate([anchor.values,
                             np.repeat(anchor.values[-1:], n - anchor.node_count, axis=0)])
        diff = DiscretePath(pv - av, p.step)
        end = pv[-1] - av[-1]
        return float(end @ end + h_norm_sq(diff))

    def dt(p: DiscretePath) -> float:
        if p.node_count < anchor.node_count:
            raise ValueError("analytic time derivative needs path at least anchor-long")
        e = p.values[-1] - a_end
        return weight * float(e @ e)

    def dx(p: DiscretePath) -> np.ndarray:
        if p.node_count < anchor.node_count:
            raise ValueError("analytic gradient needs path at least anchor-long")
        return weight * 2.0 * (p.values[-1] - a_end)

    def dxx(p: DiscretePath) -> np.ndarray:
        return weight * 2.0 * np.eye(p.dim)

    return FunctionalHandle(eval=lambda p: weight * gap_sq(p), dt=dt, dx=dx, dxx=dxx,
                            growth_degree=2, dim=anchor.dim, check_derivatives=False)


def penalty_test_functional(W: FunctionalHandle, anchor: DiscretePath, side: str,
                            weight: float = 1e-3, cfg: FDConfig = FDConfig()) -> FunctionalHandle:
    """Standard test functional for a candidate W, anchored at a ball path.

    Subsolution side: W plus the penalty, so candidate-minus-test peaks at
    the anchor.  Supersolution side: penalty minus W, so candidate-plus-test
    dips to its minimum there.
    """
    pen = quadratic_penalty(anchor, weight)
    from .calculus import add_handles

    if side == "sub":
        return add_handles(W, pen, 1.0, 1.0, cfg)
    if side == "super":
        return add_handles(W, pen, -1.0, 1.0, cfg)
    raise ValueError("side must be 'sub' or 'super'")


def terminal_condition_check(W: FunctionalHandle, coeffs: CoefficientSet, side: str,
                             ball: HolderBallSpec, n_samples: int, seed: int,
                             step: float, tol: float = 1e-9) -> tuple[bool, float]:
    """Candidate vs terminal data on sampled full-horizon ball paths.

    Subsolutions must sit below the terminal data, supersolutions above;
    returns (ok, worst signed gap on the wrong side).
    """
    full = HolderBallSpec(ball.alpha, ball.mu, ball.m0, coeffs.horizon)
    paths = sample_ball_paths(full, n_samples, coeffs.dim, step, coeffs.horizon, seed)
    worst = 0.0
    for p in paths:
        w = float(W.eval(p))
        phi = float(np.asarray(coeffs.phi(PathBatch.from_path(p)))[0])
        gap = w - phi if side == "sub" else phi - w
        worst = max(worst, gap)
    return worst <= tol, worst


def viscosity_test(W: FunctionalHandle, test_phi: FunctionalHandle, side: str,
                   ball: HolderBallSpec, coeffs: CoefficientSet, controls: ControlSet,
                   n_samples: int, seed: int, cfg: FDConfig = FDConfig(),
                   step: Optional[float] = None, residual_tol: float = 1e-2,
                   extra_probes: Optional[list] = None, gap_tol: float = 1e-9,
                   rescale_samples: bool = True) -> ViscosityTestReport:
    """One-sided residual at the sampled extremum of the candidate-test gap.

    side "sub": maximize W - phi over sampled ball paths; after recentring
    phi by the extremal constant the residual dt(phi) + H(path, W(path),
    dx(phi), dxx(phi)) must be >= -residual_tol.  side "super": minimize
    W + phi and require the mirrored residual <= residual_tol.  If the
    extremum is not interior (final time at the horizon, or endpoint on the
    sup-norm boundary) no verdict is issued.
    """
    if side not in ("sub", "super"):
        raise ValueError("side must be 'sub' or 'super'")
    if step is None:
        step = coeffs.horizon / 64
    paths = sample_ball_paths(ball, n_samples, coeffs.dim, step, coeffs.horizon, seed,
                              include_probes=rescale_samples, rescale=rescale_samples)
    if extra_probes:
        paths = paths + list(extra_probes)
    if not paths:
        # vacuous sample: no member found, no verdict possible
        terminal_ok, worst_term = terminal_condition_check(
            W, coeffs, side, ball, max(n_samples, 100), seed + 1, step)
        return ViscosityTestReport(side, False, None, None, None, 0.0,
                                   terminal_ok, worst_term, 0, ball.mu)

    sign = 1.0 if side == "sub" else -1.0
    gaps = np.array([sign * (float(W.eval(p)) - sign * float(test_phi.eval(p)))
                     for p in paths])
    # sub: gaps[i] = W - phi, maximized; super: gaps[i] = -(W + phi), maximized.
    i_star = int(np.argmax(gaps))
    gamma = paths[i_star]
    extremal_gap = float(gaps[i_star] - np.max(gaps))

    terminal_ok, worst_term = terminal_condition_check(
        W, coeffs, side, ball, max(n_samples, 100), seed + 1, step)

    horizon_nodes = round(coeffs.horizon / step)
    interior = (gamma.node_count - 1 + cfg.n_horizontal_steps <= horizon_nodes
                and float(np.linalg.norm(gamma.endpoint)) < ball.m0)
    if not interior:
        return ViscosityTestReport(side, False, None, None, gamma, extremal_gap,
                                   terminal_ok, worst_term, len(paths), ball.mu)

    _, dt, dx, dxx = _analytic_or_fd(test_phi, gamma, cfg)
    w_at = float(W.eval(gamma))
    if side == "sub":
        # phi recentred so (W - phi)(gamma) = 0, hence phi(gamma) = W(gamma).
        ham, _ = hamiltonian(coeffs, gamma, HamiltonianInput(w_at, dx, dxx), controls)
        residual = dt + ham
        passed = residual >= -residual_tol and terminal_ok
    else:
        # recentred (W + phi)(gamma) = 0, hence -phi(gamma) = W(gamma).
        ham, _ = hamiltonian(coeffs, gamma, HamiltonianInput(w_at, -dx, -dxx), controls)
        residual = -dt + ham
        passed = residual <= residual_tol and terminal_ok
    if abs(extremal_gap) > gap_tol:
        passed = None
    return ViscosityTestReport(side, True, float(residual), passed, gamma,
                               extremal_gap, terminal_ok, worst_term, len(paths), ball.mu)


def mu_limit_sweep(W: FunctionalHandle, make_test_phi: Callable[[DiscretePath], FunctionalHandle],
                   side: str, ball_template: HolderBallSpec, coeffs: CoefficientSet,
                   controls: ControlSet, mu_list: list, n_samples: int, seed: int,
                   cfg: FDConfig = FDConfig(), step: Optional[float] = None,
                   residual_tol: float = 1e-2,
                   anchor: Optional[DiscretePath] = None) -> list[ViscosityTestReport]:
    """Run the one-sided test along increasing mu with a shared seed stream.

    The defining limit over growing balls is approximated by the running
    minimum of the residuals across the sweep; each report carries its mu
    so the trend is reconstructible.  The previous maximizer is fed to the
    next run as a probe.
    """
    if any(b >= a for a, b in zip(mu_list[1:], mu_list[:-1])):
        raise ValueError("mu_list must be strictly increasing")
    reports = []
    carry = [anchor] if anchor is not None else []
    test_phi = make_test_phi(anchor)
    for mu in mu_list:
        ball = HolderBallSpec(ball_template.alpha, mu, ball_template.m0, ball_template.t0)
        rep = viscosity_test(W, test_phi, side, ball, coeffs, controls, n_samples,
                             seed, cfg, step, residual_tol, extra_probes=carry)
        reports.append(rep)
        if rep.maximizer is not None:
            carry = [rep.maximizer] + ([anchor] if anchor is not None else [])
    return reports
