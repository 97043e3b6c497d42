"""Backward equation solver on simulated trajectories.

Conditional expectations are least-squares regressions on path features
(running integrals and extrema next to the current state, because the
dynamics are path dependent).  The first backward node sits on the
deterministic initial prefix, where the conditional expectation collapses
to the plain mean.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .paths import DiscretePath, nodes_from_time
from .sde import CoefficientSet, ControlProcess, TrajectoryBatch, simulate_forward

__all__ = [
    "RegressionBasis",
    "BsdeSolution",
    "ValueEstimate",
    "SemigroupConfig",
    "solve_bsde",
    "nested_bsde_value",
    "backward_semigroup",
    "comparison_check",
    "stability_gap",
    "check_contraction",
    "ComparisonReport",
    "StabilityReport",
]

KNOWN_FEATURES = ("endpoint", "integral", "running_max", "running_min", "time")

COND_LIMIT = 1e12


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial basis over selected path features.

    Features are z-scored per step and zero-variance columns dropped before
    monomial expansion, which keeps the design matrix well conditioned; an
    intercept is always present.  ridge is the Tikhonov weight on the
    normal equations.
    """

    features: tuple = ("endpoint", "integral")
    degree: int = 2
    ridge: float = 1e-8

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError("at least one feature required")
        unknown = set(self.features) - set(KNOWN_FEATURES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")
        if not 1 <= self.degree <= 3:
            raise ValueError("degree must be 1, 2 or 3")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    def raw_features(self, pb: PathBatch) -> np.ndarray:
        cols = []
        for name in self.features:
            if name == "endpoint":
                cols.append(pb.endpoint)
            elif name == "integral":
                cols.append(pb.running_integral)
            elif name == "running_max":
                cols.append(pb.running_max)
            elif name == "running_min":
                cols.append(pb.running_min)
            elif name == "time":
                cols.append(np.full((pb.n_paths, 1), pb.t))
        return np.concatenate(cols, axis=1)

    def to_json_dict(self) -> dict:
        return {"features": list(self.features), "degree": self.degree, "ridge": self.ridge}


class StepRegression:
    """Monomial least squares fitted at one time step; reusable for prediction.

    Zero-variance features are dropped before the monomial expansion and
    linearly dependent design columns after it (features can coincide
    exactly, e.g. a state block riding on the noise path under a constant
    policy).  Both masks are stored so predictions on fresh paths use the
    identical design.
    """

    def __init__(self, basis: RegressionBasis, raw: np.ndarray):
        self.basis = basis
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        self.keep = std > 1e-13
        self.mean = mean
        self.std = np.where(self.keep, std, 1.0)
        n_kept = int(self.keep.sum())
        self.exponents = _monomial_exponents(n_kept, basis.degree)
        self.condition_number = None
        full = self._full_design(raw)
        self.col_keep = _independent_columns(full)
        self._design_cached = full[:, self.col_keep]

    def _full_design(self, raw: np.ndarray) -> np.ndarray:
        z = (raw[:, self.keep] - self.mean[self.keep]) / self.std[self.keep]
        cols = [np.ones(raw.shape[0])]
        for expo in self.exponents:
            col = np.ones(raw.shape[0])
            for j, e in enumerate(expo):
                if e:
                    col = col * z[:, j] ** e
            cols.append(col)
        return np.stack(cols, axis=1)

    def design(self, raw: np.ndarray) -> np.ndarray:
        return self._full_design(raw)[:, self.col_keep]

    def fit(self, targets: np.ndarray, step_index: int) -> np.ndarray:
        """Fit one or more target columns; returns fitted values, same shape."""
        X = self._design_cached
        if self.condition_number is None:
            self.condition_number = float(np.linalg.cond(X))
            if self.condition_number > COND_LIMIT:
                raise np.linalg.LinAlgError(
                    f"singular regression at step {step_index}: condition number "
                    f"{self.condition_number:.3e} exceeds {COND_LIMIT:.0e}")
        A = X.T @ X + self.basis.ridge * _ridge_eye(X.shape[1])
        B = X.T @ np.atleast_2d(targets.T).T.reshape(X.shape[0], -1)
        coef = np.linalg.solve(A, B)
        self._last_coef = coef
        out = X @ coef
        return out.reshape(targets.shape)

    def predict_from(self, coef: np.ndarray, raw: np.ndarray) -> np.ndarray:
        return self.design(raw) @ coef


def _ridge_eye(p: int) -> np.ndarray:
    """Tikhonov weights leaving the intercept unpenalized, so fitted values
    keep the target's sample mean exactly."""
    eye = np.eye(p)
    eye[0, 0] = 0.0
    return eye


def _independent_columns(X: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Greedy left-to-right mask keeping columns with independent content.

    A column is dropped when its residual after projecting onto the kept
    span is below rel_tol of its own norm; the intercept is always kept.
    """
    m, p = X.shape
    keep = np.zeros(p, dtype=bool)
    basis_cols: list[np.ndarray] = []
    for j in range(p):
        col = X[:, j].astype(float)
        norm0 = np.linalg.norm(col)
        if norm0 == 0.0:
            continue
        resid = col.copy()
        for b in basis_cols:
            resid -= (b @ resid) * b
        if np.linalg.norm(resid) > rel_tol * norm0:
            keep[j] = True
            resid /= np.linalg.norm(resid)
            # re-orthogonalize once for numerical safety
            for b in basis_cols:
                resid -= (b @ resid) * b
            resid /= np.linalg.norm(resid)
            basis_cols.append(resid)
    return keep


def _monomial_exponents(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), total):
            expo = [0] * n_vars
            for c in combo:
                expo[c] += 1
            out.append(tuple(expo))
    return out


@dataclass(frozen=True)
class ValueEstimate:
    """A numerical value with its Monte Carlo error and discretization data."""

    value: float
    std_error: float
    solver: str
    n_steps: int
    n_paths: int
    seed: Optional[int] = None

    def __post_init__(self):
        if self.solver == "tree" and self.std_error != 0.0:
            raise ValueError("tree estimates are exact: std_error must be 0")
        if self.solver != "tree" and self.std_error < 0.0:
            raise ValueError("std_error must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "solver": self.solver,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


@dataclass
class BsdeSolution:
    """Per-trajectory Y on [t, T], Z on [t, T), and the collapsed Y(t)."""

    Y: np.ndarray
    Z: np.ndarray
    y0: float
    std_error: float
    basis: RegressionBasis
    step: float = 0.0
    condition_numbers: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.Y.shape[1] - 1

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "y0": self.y0,
            "std_error": self.std_error,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
            "basis": self.basis.to_json_dict(),
        }


def check_contraction(coeffs: CoefficientSet, step: float):
    """The one-iteration implicit driver step needs step * Lip(q) < 1."""
    L = coeffs.lipschitz_L
    if L is not None and step * L >= 1.0:
        raise ValueError(f"implicit driver step is not a contraction: "
                         f"step {step} * L {L} >= 1")


def _grouped_driver(driver, pb: PathBatch, y: np.ndarray, z: np.ndarray,
                    control_indices: np.ndarray, control_set) -> np.ndarray:
    out = np.empty(pb.n_paths)
    for c in np.unique(control_indices):
        sel = control_indices == c
        u = control_set.points[int(c)]
        out[sel] = np.asarray(driver(pb.take(sel), y[sel], z[sel], u), dtype=float)
    return out


def solve_bsde(batch: TrajectoryBatch, driver: Optional[Callable], terminal: Callable,
               basis: RegressionBasis = RegressionBasis(), mode: str = "implicit",
               value_surrogates: Optional[list] = None) -> BsdeSolution:
    """Backward recursion for (Y, Z) along the simulated batch.

    Y_N is the terminal functional per trajectory, exactly.  At step k,
    Z_k regresses Y_{k+1} dW_k / h on the step-k features and Y_k adds the
    driver: implicitly (one fixed-point iteration started from the
    continuation estimate) or explicitly with Y_{k+1} inside the driver.
    When Y_{k+1} is constant across trajectories the true conditional
    expectations are the constant and zero; both shortcuts are taken, which
    makes driver-only fixtures exact.  Passing value_surrogates=[] collects
    the per-step fitted regressions of Y on features.
    """
    if batch.n_paths == 0:
        raise ValueError("empty trajectory batch")
    if mode not in ("implicit", "explicit"):
        raise ValueError("mode must be 'implicit' or 'explicit'")
    m = batch.n_paths
    n_steps = batch.n_steps
    h = batch.step
    k0 = batch.start_index
    n_noise = batch.increments.shape[2] if batch.increments is not None else 1

    Y = np.empty((m, n_steps + 1))
    Z = np.zeros((m, n_steps, n_noise))
    Y[:, n_steps] = np.asarray(terminal(batch.terminal()), dtype=float)
    if not np.all(np.isfinite(Y[:, n_steps])):
        raise FloatingPointError("terminal functional evaluated non-finite")
    conds = []
    # per-sample realized value: terminal plus accumulated driver terms;
    # its spread gives the Monte Carlo error of the collapsed estimate
    realized = Y[:, n_steps].copy()

    for j in range(n_steps - 1, -1, -1):
        k = k0 + j
        pb = batch.prefix(k + 1)
        y_next = Y[:, j + 1]
        dW = batch.increments[:, j, :]
        constant_next = float(np.ptp(y_next)) == 0.0
        if j == 0 or constant_next:
            # Deterministic prefix at j == 0, or constant integrand: the
            # conditional expectation is the plain mean, and E[c dW] = 0.
            ce = np.full(m, float(np.mean(y_next)))
            if constant_next:
                z = np.zeros((m, n_noise))
            else:
                z = np.broadcast_to(
                    np.mean((y_next - ce[0])[:, None] * dW, axis=0) / h,
                    (m, n_noise)).copy()
        else:
            reg = StepRegression(basis, basis.raw_features(pb))
            ce = reg.fit(y_next, k)
            # Centering by the fitted continuation leaves the projection
            # unbiased and strips the O(1/sqrt(h)) noise scale.
            z = reg.fit((y_next - ce)[:, None] * dW / h, k)
            conds.append(reg.condition_number)
        Z[:, j, :] = z
        if driver is None:
            Y[:, j] = ce
        else:
            idx = batch.control_indices[:, j]
            if mode == "implicit":
                qv = _grouped_driver(driver, pb, ce, z, idx, batch.control_set)
                Y[:, j] = ce + h * qv
            else:
                qv = _grouped_driver(driver, pb, y_next, z, idx, batch.control_set)
                target = y_next + h * qv
                if j == 0 or float(np.ptp(target)) == 0.0:
                    Y[:, j] = np.mean(target)
                else:
                    reg2 = StepRegression(basis, basis.raw_features(pb))
                    Y[:, j] = reg2.fit(target, k)
            realized += h * qv
        if value_surrogates is not None:
            raw = basis.raw_features(pb)
            sreg = StepRegression(basis, raw)
            sreg.fit(Y[:, j], k)
            value_surrogates.append((k, sreg, sreg._last_coef))

    if value_surrogates is not None:
        value_surrogates.reverse()
    y0 = float(Y[0, 0])
    se = float(np.std(realized, ddof=1) / np.sqrt(m)) if n_steps > 0 and m > 1 else 0.0
    return BsdeSolution(Y=Y, Z=Z, y0=y0, std_error=se, basis=basis, step=h,
                        condition_numbers=conds)


def nested_bsde_value(coeffs: CoefficientSet, initial: DiscretePath, control_index: int,
                      controls, n_steps: int, branch: int = 5, repeats: int = 32,
                      seed: int = 0) -> ValueEstimate:
    """Slow nested Monte Carlo oracle for the backward value at scalar desk scale.

    Builds a non-recombining random tree: each node spawns `branch` children
    with fresh Gaussian increments, conditional expectations are plain
    child means and the projection the child covariance with the increments.
    Cost grows like branch^n_steps, so this is only usable for one spatial
    dimension and a handful of steps; the root estimate is averaged over
    independent repeats and its spread across repeats gives the error bar.
    Serves as a regression-free check of the least-squares solver.
    """
    if coeffs.dim != 1 or n_steps > 8:
        raise ValueError("nested oracle is restricted to dim 1 and n_steps <= 8")
    if branch ** n_steps > 2_000_000:
        raise ValueError("nested tree too large")
    u = controls.points[control_index]
    h = initial.step if initial.node_count > 1 else coeffs.horizon / n_steps
    if initial.node_count == 1:
        initial = DiscretePath(initial.values, h, continuous_origin=initial.continuous_origin)
    if nodes_from_time(coeffs.horizon, h) - (initial.node_count - 1) != n_steps:
        raise ValueError("grid mismatch between initial path and n_steps")
    rng = np.random.default_rng(seed)
    roots = np.empty(repeats)
    n = coeffs.noise_dim
    for r in range(repeats):
        levels = [np.asarray(initial.values, dtype=float)[None, :, :]]
        incs = []
        for _ in range(n_steps):
            level = levels[-1]
            m, nodes, d = level.shape
            pb = PathBatch(level, h)
            F = np.asarray(coeffs.F(pb, u), dtype=float)
            G = np.asarray(coeffs.G(pb, u), dtype=float)
            dW = rng.standard_normal((m, branch, n)) * np.sqrt(h)
            ends = level[:, -1, None, :] + F[:, None, :] * h + np.einsum(
                "mij,mbj->mbi", G, dW)
            child = np.empty((m * branch, nodes + 1, d))
            child[:, :nodes, :] = np.repeat(level, branch, axis=0)
            child[:, nodes, :] = ends.reshape(m * branch, d)
            levels.append(child)
            incs.append(dW)
        V = np.asarray(coeffs.phi(PathBatch(levels[-1], h)), dtype=float)
        for k in range(n_steps - 1, -1, -1):
            level = levels[k]
            m = level.shape[0]
            Vr = V.reshape(m, branch)
            Ey = Vr.mean(axis=1)
            Z = np.einsum("mb,mbn->mn", Vr - Ey[:, None], incs[k]) / (branch * h)
            q = np.asarray(coeffs.q(PathBatch(level, h), Ey, Z, u), dtype=float)
            V = Ey + h * q
        roots[r] = V[0]
    se = float(np.std(roots, ddof=1) / np.sqrt(repeats)) if repeats > 1 else 0.0
    return ValueEstimate(float(np.mean(roots)), se, "regression", n_steps,
                         repeats * branch ** n_steps, seed)


@dataclass(frozen=True)
class SemigroupConfig:
    n_paths: int = 4096
    seed: int = 0
    basis: RegressionBasis = RegressionBasis()
    mode: str = "implicit"
    noise: str = "gaussian"


def backward_semigroup(coeffs: CoefficientSet, initial: DiscretePath, u: ControlProcess,
                       delta: float, eta: Callable, cfg: SemigroupConfig = SemigroupConfig()) -> ValueEstimate:
    """Solve the backward equation on [t, t+delta] with terminal eta(X_{t+delta}).

    eta consumes a PathBatch of the full prefixes at t+delta.  Composing the
    value through this operator is what the dynamic programming identity
    tests.
    """
    k_delta = nodes_from_time(delta, initial.step)
    n_total = nodes_from_time(coeffs.horizon, initial.step)
    k0 = initial.node_count - 1
    if k0 + k_delta > n_total:
        raise ValueError("t + delta exceeds the horizon")
    check_contraction(coeffs, initial.step)
    short = CoefficientSet(dim=coeffs.dim, noise_dim=coeffs.noise_dim, F=coeffs.F,
                           G=coeffs.G, q=coeffs.q, phi=eta,
                           horizon=(k0 + k_delta) * initial.step,
                           lipschitz_L=coeffs.lipschitz_L)
    batch = simulate_forward(short, initial, u, cfg.n_paths, cfg.seed, noise=cfg.noise)
    sol = solve_bsde(batch, coeffs.q, eta, cfg.basis, cfg.mode)
    return ValueEstimate(sol.y0, sol.std_error, "regression", k_delta, cfg.n_paths, cfg.seed)


@dataclass(frozen=True)
class ComparisonReport:
    """fraction_ok counts (trajectory, step) cells respecting the order;
    worst_violation is the largest shortfall beyond the tolerance (0 if none);
    min_difference is the most negative raw difference, for diagnostics."""

    fraction_ok: float
    worst_violation: float
    min_difference: float
    max_tol: float

    def to_json_dict(self) -> dict:
        return {"fraction_ok": self.fraction_ok, "worst_violation": self.worst_violation,
                "min_difference": self.min_difference, "max_tol": self.max_tol}


def comparison_check(batch: TrajectoryBatch, driver: Optional[Callable],
                     terminal_lo: Callable, terminal_hi: Callable,
                     basis: RegressionBasis = RegressionBasis(),
                     tol: float | None = None) -> ComparisonReport:
    """Solve both backward equations on shared noise and check Y_hi >= Y_lo - tol.

    Pointwise-ordered terminal data with a common driver must produce
    ordered solutions.  The fitted difference at a sample point carries
    prediction noise of variance (residual variance) x (leverage), so the
    default tolerance is three such standard errors per (trajectory, step);
    a scalar tol overrides it.  The report gives the fraction of
    (trajectory, step) pairs respecting the order and the worst violation.
    """
    lo_T = np.asarray(terminal_lo(batch.terminal()), dtype=float)
    hi_T = np.asarray(terminal_hi(batch.terminal()), dtype=float)
    if np.any(hi_T < lo_T):
        raise ValueError("terminal_hi must dominate terminal_lo pointwise on the batch")
    sol_lo = solve_bsde(batch, driver, terminal_lo, basis)
    sol_hi = solve_bsde(batch, driver, terminal_hi, basis)
    diff = sol_hi.Y - sol_lo.Y
    m = batch.n_paths
    n_steps = batch.n_steps
    k0 = batch.start_index
    if tol is not None:
        tol_arr = np.full((m, n_steps + 1), tol)
    else:
        tol_arr = np.full((m, n_steps + 1), 1e-12)
        for j in range(1, n_steps):
            target = diff[:, j + 1]
            if float(np.ptp(target)) == 0.0:
                continue
            reg = StepRegression(basis, basis.raw_features(batch.prefix(k0 + j + 1)))
            X = reg._design_cached
            fitted = reg.fit(target, k0 + j)
            resid = target - fitted
            dof = max(m - X.shape[1], 1)
            sigma = float(np.sqrt(resid @ resid / dof))
            A = X.T @ X + basis.ridge * _ridge_eye(X.shape[1])
            leverage = np.einsum("ij,ij->i", X, np.linalg.solve(A, X.T).T)
            tol_arr[:, j] += 3.0 * sigma * np.sqrt(np.maximum(leverage, 0.0))
        if n_steps > 0 and float(np.ptp(diff[:, 1])) > 0.0:
            tol_arr[:, 0] += 3.0 * float(np.std(diff[:, 1], ddof=1)) / np.sqrt(m)
    ok = diff >= -tol_arr
    excess = float(np.max(np.maximum(-diff - tol_arr, 0.0)))
    return ComparisonReport(float(np.mean(ok)), excess, float(np.min(diff)),
                            float(np.max(tol_arr)))


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    beta: float
    slack: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "beta": self.beta,
                "slack": self.slack, "passed": self.passed}


def stability_gap(sol1: BsdeSolution, sol2: BsdeSolution, varphi_gap: np.ndarray,
                  L: float, beta: float, slack: float = 0.1) -> StabilityReport:
    """Empirical a-priori estimate for two solutions driven by the same noise.

    The drivers must differ by a (y, z)-independent per-step process whose
    gap is varphi_gap; beta must be at least 2(2L^2 + L + 1) for the
    exponential weights to absorb the Lipschitz constant L.  The terminal
    gap is read off the solutions' final columns.  Expectations are sample
    means over the shared batch; pass means lhs <= rhs(1+slack).
    """
    beta_min = 2 * (2 * L**2 + L + 1)
    if beta < beta_min - 1e-12:
        raise ValueError(f"beta {beta} below the admissible threshold {beta_min}")
    if sol1.Y.shape != sol2.Y.shape or sol1.step != sol2.step:
        raise ValueError("solutions must live on the same batch")
    step = sol1.step
    n_steps = sol1.n_steps
    dY = sol1.Y - sol2.Y
    dZ = sol1.Z - sol2.Z
    s_minus_t = np.arange(n_steps + 1) * step
    w = np.exp(beta * s_minus_t)
    integrand = dY[:, :-1] ** 2 + np.sum(dZ**2, axis=2)
    lhs = float(dY[0, 0] ** 2 + 0.5 * np.mean(np.sum(integrand * w[:-1] * step, axis=1)))
    phi2 = np.broadcast_to(np.asarray(varphi_gap, dtype=float) ** 2, (sol1.n_paths, n_steps))
    rhs = float(np.mean(dY[:, -1] ** 2) * w[-1]
                + np.mean(np.sum(phi2 * w[:-1] * step, axis=1)))
    return StabilityReport(lhs, rhs, beta, slack, lhs <= rhs * (1 + slack))
