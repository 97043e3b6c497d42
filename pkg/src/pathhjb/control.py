"""Value of the control problem, the Hamiltonian, and dynamic-programming checks.

Two solvers: an exact backward induction on a non-recombining two-point
branch tree (the oracle everything else is checked against) and a two-pass
regression Monte Carlo solver (learn a feedback policy from an exploration
batch, then evaluate that policy on fresh noise, which avoids the upward
bias of iterated maxima of fitted continuations).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .bsde import (RegressionBasis, SemigroupConfig, StepRegression, ValueEstimate,
                   backward_semigroup, check_contraction, solve_bsde)
from .calculus import FDConfig, FunctionalHandle, _analytic_or_fd
from .paths import DiscretePath, nodes_from_time, random_walk_paths, sup_norm
from .sde import (CoefficientSet, ConstantControl, ControlProcess, ControlSet,
                  ExplorationControl, FeedbackControl, simulate_forward)

__all__ = [
    "HamiltonianInput",
    "hamiltonian",
    "generator_L",
    "value_tree",
    "tree_control_value",
    "value_regression",
    "RegressionValueConfig",
    "RegressionValueResult",
    "dpp_residual",
    "DppReport",
    "value_lipschitz_report",
    "LipschitzReport",
]

MAX_TREE_LEAVES = 4_000_000


@dataclass(frozen=True)
class HamiltonianInput:
    """Scalar level r, gradient p and symmetric curvature l."""

    r: float
    p: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        l = np.atleast_2d(np.asarray(self.l, dtype=float))
        if l.shape != (p.shape[0], p.shape[0]):
            raise ValueError("l must be d x d for p of length d")
        if np.max(np.abs(l - l.T)) > 1e-12:
            raise ValueError("l must be symmetric within 1e-12")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "l", 0.5 * (l + l.T))


def hamiltonian(coeffs: CoefficientSet, p_path: DiscretePath, inp: HamiltonianInput,
                controls: ControlSet) -> tuple[float, object]:
    """sup over controls of (p, F) + tr(l G G^T)/2 + q(path, r, G^T p, u).

    Ties break toward the lowest control index for determinism.  Returns
    (value, maximizing control point).
    """
    pb = PathBatch.from_path(p_path)
    best = -np.inf
    best_u = None
    for u in controls.points:
        F = np.asarray(coeffs.F(pb, u), dtype=float)[0]
        G = np.asarray(coeffs.G(pb, u), dtype=float)[0]
        z = G.T @ inp.p
        q = float(np.asarray(coeffs.q(pb, np.array([inp.r]), z[None, :], u))[0])
        val = float(inp.p @ F + 0.5 * np.trace(inp.l @ (G @ G.T)) + q)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite Hamiltonian summand at control {u!r}")
        if val > best:
            best = val
            best_u = u
    return best, best_u


def generator_L(coeffs: CoefficientSet, phi: FunctionalHandle, p_path: DiscretePath,
                u, cfg: FDConfig = FDConfig()) -> float:
    """Drift of phi along the controlled dynamics at a fixed control.

    Time derivative plus gradient against F, half trace of the Hessian
    against G G^T, plus the driver at (phi, G^T grad).  Analytic derivatives
    are used when the handle supplies them, finite differences otherwise.
    """
    val, dt, dx, dxx = _analytic_or_fd(phi, p_path, cfg)
    pb = PathBatch.from_path(p_path)
    F = np.asarray(coeffs.F(pb, u), dtype=float)[0]
    G = np.asarray(coeffs.G(pb, u), dtype=float)[0]
    q = float(np.asarray(coeffs.q(pb, np.array([val]), (G.T @ dx)[None, :], u))[0])
    return float(dt + dx @ F + 0.5 * np.trace(dxx @ (G @ G.T)) + q)


# ---------------------------------------------------------------------------
# Exact tree solver.


def _branch_increments(noise_dim: int, h: float) -> np.ndarray:
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=noise_dim)))
    return signs * np.sqrt(h)


def _tree_step(coeffs: CoefficientSet, level: np.ndarray, step: float,
               controls: ControlSet, dW: np.ndarray) -> np.ndarray:
    """Expand one level: children ordered (node, control, branch)."""
    m, nodes, d = level.shape
    C, B = len(controls), dW.shape[0]
    pb = PathBatch(level, step)
    ends = np.empty((m, C, B, d))
    for c, u in enumerate(controls.points):
        F = np.asarray(coeffs.F(pb, u), dtype=float)
        G = np.asarray(coeffs.G(pb, u), dtype=float)
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
            raise FloatingPointError("non-finite coefficient on the tree")
        ends[:, c, :, :] = (level[:, -1, None, :] + F[:, None, :] * step
                            + np.einsum("mij,bj->mbi", G, dW))
    child = np.empty((m * C * B, nodes + 1, d))
    child[:, :nodes, :] = np.repeat(level, C * B, axis=0)
    child[:, nodes, :] = ends.reshape(m * C * B, d)
    return child


def _tree_backward(coeffs: CoefficientSet, controls: ControlSet, levels: list,
                   dW: np.ndarray, step: float, leaf_values: np.ndarray) -> np.ndarray:
    C, B = len(controls), dW.shape[0]
    V = leaf_values
    for level in reversed(levels[:-1]):
        m = level.shape[0]
        pb = PathBatch(level, step)
        Vr = V.reshape(m, C, B)
        Ey = Vr.mean(axis=2)
        Z = np.einsum("mcb,bn->mcn", Vr, dW) / (B * step)
        cand = np.empty((m, C))
        for c, u in enumerate(controls.points):
            q = np.asarray(coeffs.q(pb, Ey[:, c], Z[:, c, :], u), dtype=float)
            cand[:, c] = Ey[:, c] + step * q
        V = cand.max(axis=1)
    return V


def _tree_grid(coeffs: CoefficientSet, initial: DiscretePath, n_steps: int) -> tuple[DiscretePath, float]:
    """Fix the tree grid: a one-node initial adopts step (T - t)/n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    if initial.node_count == 1:
        h = coeffs.horizon / n_steps
        return DiscretePath(initial.values, h, continuous_origin=initial.continuous_origin), h
    h = initial.step
    remaining = nodes_from_time(coeffs.horizon, h) - (initial.node_count - 1)
    if remaining != n_steps:
        raise ValueError(f"grid mismatch: {remaining} steps remain to the horizon, "
                         f"n_steps={n_steps}")
    return initial, h


def value_tree(coeffs: CoefficientSet, initial: DiscretePath, controls: ControlSet,
               n_steps: int, max_leaves: int = MAX_TREE_LEAVES) -> ValueEstimate:
    """Exact backward induction on the two-point branch tree.

    Each step branches over every control point and every +-sqrt(h) noise
    pattern, so expectations and the branch projection of Z are exact and
    the returned value is deterministic (std_error 0).  This is the
    brute-force oracle for the Monte Carlo solvers; leaf count
    (n_controls * 2^noise_dim)^n_steps is capped by max_leaves.
    """
    initial, h = _tree_grid(coeffs, initial, n_steps)
    check_contraction(coeffs, h)
    C, B = len(controls), 2 ** coeffs.noise_dim
    if (C * B) ** n_steps > max_leaves:
        raise ValueError(f"tree too large: {(C * B) ** n_steps} leaves exceed {max_leaves}")
    dW = _branch_increments(coeffs.noise_dim, h)
    levels = [np.asarray(initial.values, dtype=float)[None, :, :]]
    for _ in range(n_steps):
        levels.append(_tree_step(coeffs, levels[-1], h, controls, dW))
    leaf_vals = np.asarray(coeffs.phi(PathBatch(levels[-1], h)), dtype=float)
    V = _tree_backward(coeffs, controls, levels, dW, h, leaf_vals)
    return ValueEstimate(float(V[0]), 0.0, "tree", n_steps, levels[-1].shape[0])


def tree_control_value(coeffs: CoefficientSet, initial: DiscretePath, controls: ControlSet,
                       process: ControlProcess, n_steps: int,
                       max_leaves: int = MAX_TREE_LEAVES) -> float:
    """Exact tree expectation of the backward equation under a fixed control.

    Same branch tree as value_tree but the control at every node is dictated
    by the process; the optimal value dominates this for every process.
    """
    initial, h = _tree_grid(coeffs, initial, n_steps)
    B = 2 ** coeffs.noise_dim
    if B ** n_steps > max_leaves:
        raise ValueError("tree too large")
    k0 = initial.node_count - 1
    dW = _branch_increments(coeffs.noise_dim, h)
    levels = [np.asarray(initial.values, dtype=float)[None, :, :]]
    chosen = []
    for k in range(n_steps):
        level = levels[-1]
        pb = PathBatch(level, h)
        idx = process.indices(pb, k0 + k)
        chosen.append(idx)
        m, nodes, d = level.shape
        ends = np.empty((m, B, d))
        for c in np.unique(idx):
            sel = idx == c
            u = controls.points[int(c)]
            F = np.asarray(coeffs.F(pb.take(sel), u), dtype=float)
            G = np.asarray(coeffs.G(pb.take(sel), u), dtype=float)
            ends[sel] = level[sel, -1, None, :] + F[:, None, :] * h + np.einsum(
                "mij,bj->mbi", G, dW)
        child = np.empty((m * B, nodes + 1, d))
        child[:, :nodes, :] = np.repeat(level, B, axis=0)
        child[:, nodes, :] = ends.reshape(m * B, d)
        levels.append(child)
    V = np.asarray(coeffs.phi(PathBatch(levels[-1], h)), dtype=float)
    for k in range(n_steps - 1, -1, -1):
        level = levels[k]
        pb = PathBatch(level, h)
        m = level.shape[0]
        Vr = V.reshape(m, B)
        Ey = Vr.mean(axis=1)
        Z = (Vr @ dW) / (B * h)
        idx = chosen[k]
        q = np.empty(m)
        for c in np.unique(idx):
            sel = idx == c
            u = controls.points[int(c)]
            q[sel] = np.asarray(coeffs.q(pb.take(sel), Ey[sel], Z[sel], u), dtype=float)
        V = Ey + h * q
    return float(V[0])


# ---------------------------------------------------------------------------
# Regression Monte Carlo solver.


@dataclass(frozen=True)
class RegressionValueConfig:
    n_steps: int
    n_paths: int
    seed: int = 0
    basis: RegressionBasis = RegressionBasis()
    mode: str = "implicit"
    evaluate_policy: bool = True


@dataclass
class PolicyStep:
    """Fitted per-control continuations at one step; argmax gives the policy."""

    node_index: int
    regression: Optional[StepRegression]
    coef_by_control: list
    z_coef_by_control: list
    means_by_control: Optional[np.ndarray] = None
    z_means_by_control: Optional[np.ndarray] = None

    def continuations(self, pb: PathBatch, basis: RegressionBasis) -> tuple[np.ndarray, np.ndarray]:
        """(m, C) continuation values and (m, C, n) projections for new paths."""
        m = pb.n_paths
        if self.regression is None:
            C = self.means_by_control.shape[0]
            ce = np.broadcast_to(self.means_by_control, (m, C)).copy()
            z = np.broadcast_to(self.z_means_by_control, (m, C, self.z_means_by_control.shape[1])).copy()
            return ce, z
        C = len(self.coef_by_control)
        raw = basis.raw_features(pb)
        design = self.regression.design(raw)
        ce = np.stack([design @ self.coef_by_control[c][:, 0] for c in range(C)], axis=1)
        z = np.stack([design @ self.z_coef_by_control[c] for c in range(C)], axis=1)
        return ce, z


@dataclass
class RegressionValueResult:
    estimate: ValueEstimate
    raw_backward_value: float
    policy: list
    surrogates: list
    basis: RegressionBasis

    def surrogate_at(self, node_index: int) -> Callable[[PathBatch], np.ndarray]:
        """Fitted value functional at a grid node, evaluable on fresh paths."""
        for k, sreg, coef in self.surrogates:
            if k == node_index:
                basis = self.basis
                return lambda pb: sreg.predict_from(coef, basis.raw_features(pb))[:, 0]
        raise KeyError(f"no value surrogate at node {node_index}")


def _fit_subset(reg: StepRegression, mask: np.ndarray, targets: np.ndarray,
                ridge: float) -> np.ndarray:
    from .bsde import _ridge_eye

    X = reg._design_cached[mask]
    t = np.atleast_2d(targets[mask].T).T.reshape(X.shape[0], -1)
    A = X.T @ X + ridge * _ridge_eye(X.shape[1])
    return np.linalg.solve(A, X.T @ t)


def value_regression(coeffs: CoefficientSet, initial: DiscretePath, controls: ControlSet,
                     cfg: RegressionValueConfig) -> RegressionValueResult:
    """Two-pass regression Monte Carlo value estimate.

    Pass 1 simulates under a uniform exploration mixture and recurses
    backward: per candidate control the continuation is regressed on path
    features from the trajectories that used that control, and the step
    value is the per-sample max of the driver-adjusted continuations.  The
    fitted continuations define a feedback policy.  Pass 2 simulates fresh
    trajectories under that policy and evaluates them with the backward
    solver; that estimate is reported, because the pass-1 recursion stacks
    maxima of noisy fits and drifts upward with the step count, while
    policy evaluation is biased only by policy suboptimality.  The raw
    pass-1 number is kept on the result for comparison.
    """
    initial, h = _tree_grid(coeffs, initial, cfg.n_steps)
    check_contraction(coeffs, h)
    k0 = initial.node_count - 1
    n_steps = cfg.n_steps
    m = cfg.n_paths
    C = len(controls)
    basis = cfg.basis

    explore = ExplorationControl(controls, cfg.seed + 1, n_steps, offset=k0)
    batch = simulate_forward(coeffs, initial, explore, m, cfg.seed)

    V = np.asarray(coeffs.phi(batch.terminal()), dtype=float)
    n_noise = coeffs.noise_dim
    policy: list[Optional[PolicyStep]] = [None] * n_steps

    for j in range(n_steps - 1, -1, -1):
        k = k0 + j
        pb = batch.prefix(k + 1)
        dW = batch.increments[:, j, :]
        idx = batch.control_indices[:, j]
        if j == 0:
            ce = np.empty((m, C))
            z = np.empty((m, C, n_noise))
            means = np.empty(C)
            z_means = np.empty((C, n_noise))
            for c in range(C):
                sel = idx == c
                if not np.any(sel):
                    sel = slice(None)
                means[c] = float(np.mean(V[sel]))
                z_means[c] = np.mean((V[sel] - means[c])[:, None] * dW[sel], axis=0) / h
                ce[:, c] = means[c]
                z[:, c, :] = z_means[c]
            policy[j] = PolicyStep(k, None, [], [], means, z_means)
        else:
            reg = StepRegression(basis, basis.raw_features(pb))
            reg.fit(V, k)  # locks in the condition-number check
            ce = np.empty((m, C))
            z = np.empty((m, C, n_noise))
            coefs, z_coefs = [], []
            design = reg._design_cached
            for c in range(C):
                sel = idx == c
                if sel.sum() < design.shape[1] + 2:
                    sel = np.ones(m, dtype=bool)
                coef = _fit_subset(reg, sel, V, basis.ridge)
                ce[:, c] = design @ coef[:, 0]
                zc = _fit_subset(reg, sel, (V - ce[:, c])[:, None] * dW / h, basis.ridge)
                coefs.append(coef)
                z_coefs.append(zc)
                z[:, c, :] = design @ zc
            policy[j] = PolicyStep(k, reg, coefs, z_coefs)
        cand = np.empty((m, C))
        for c, u in enumerate(controls.points):
            q = np.asarray(coeffs.q(pb, ce[:, c], z[:, c, :], u), dtype=float)
            cand[:, c] = ce[:, c] + h * q
        V = cand.max(axis=1)

    raw_value = float(V[0])

    if not cfg.evaluate_policy:
        est = ValueEstimate(raw_value, max(float(np.std(V, ddof=1) / np.sqrt(m)), 0.0)
                            if m > 1 else 0.0, "regression", n_steps, m, cfg.seed)
        return RegressionValueResult(est, raw_value, policy, [], basis)

    def rule(pb: PathBatch, step_index: int) -> np.ndarray:
        ps = policy[step_index - k0]
        ce, z = ps.continuations(pb, basis)
        cand = np.empty_like(ce)
        for c, u in enumerate(controls.points):
            q = np.asarray(coeffs.q(pb, ce[:, c], z[:, c, :], u), dtype=float)
            cand[:, c] = ce[:, c] + h * q
        return np.argmax(cand, axis=1)

    policy_control = FeedbackControl(controls, rule)
    batch2 = simulate_forward(coeffs, initial, policy_control, m, cfg.seed + 2)
    surrogates: list = []
    sol = solve_bsde(batch2, coeffs.q, coeffs.phi, basis, cfg.mode,
                     value_surrogates=surrogates)
    est = ValueEstimate(sol.y0, sol.std_error, "regression", n_steps, m, cfg.seed)
    return RegressionValueResult(est, raw_value, policy, surrogates, basis)


# ---------------------------------------------------------------------------
# Dynamic programming residual and value-regularity reports.


@dataclass(frozen=True)
class DppReport:
    lhs: float
    rhs: float
    residual: float
    lhs_se: float
    rhs_se: float
    tol: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "lhs_se": self.lhs_se, "rhs_se": self.rhs_se, "tol": self.tol,
                "passed": self.passed}


def dpp_residual(coeffs: CoefficientSet, initial: DiscretePath, controls: ControlSet,
                 delta: float, solver: str = "tree", n_steps: int = 4,
                 reg_cfg: Optional[RegressionValueConfig] = None,
                 tol: Optional[float] = None) -> DppReport:
    """|V(t) - sup over first-interval controls of the semigroup of V(t+delta)|.

    Tree mode re-runs the induction with the continuation value as terminal
    data at t+delta, so the residual is zero up to rounding by construction.
    Regression mode composes the fitted value surrogate at t+delta through
    the backward semigroup under each constant first-interval control.
    """
    if solver == "tree":
        initial_g, h = _tree_grid(coeffs, initial, n_steps)
        k_delta = nodes_from_time(delta, h)
        if not 1 <= k_delta <= n_steps:
            raise ValueError("delta must cover between one step and the horizon")
        lhs = value_tree(coeffs, initial_g, controls, n_steps).value
        dW = _branch_increments(coeffs.noise_dim, h)
        levels = [np.asarray(initial_g.values, dtype=float)[None, :, :]]
        for _ in range(k_delta):
            levels.append(_tree_step(coeffs, levels[-1], h, controls, dW))
        leaves = levels[-1]
        eta = np.empty(leaves.shape[0])
        for i in range(leaves.shape[0]):
            node_path = DiscretePath(leaves[i].copy(), h)
            if k_delta == n_steps:
                eta[i] = float(np.asarray(coeffs.phi(PathBatch.from_path(node_path)))[0])
            else:
                eta[i] = value_tree(coeffs, node_path, controls, n_steps - k_delta).value
        rhs = float(_tree_backward(coeffs, controls, levels, dW, h, eta)[0])
        residual = abs(lhs - rhs)
        t = tol if tol is not None else 1e-12
        return DppReport(lhs, rhs, residual, 0.0, 0.0, t, residual <= t)

    if solver != "regression":
        raise ValueError("solver must be 'tree' or 'regression'")
    if reg_cfg is None:
        raise ValueError("regression mode needs a RegressionValueConfig")
    initial_g, h = _tree_grid(coeffs, initial, reg_cfg.n_steps)
    k0 = initial_g.node_count - 1
    k_delta = nodes_from_time(delta, h)
    res = value_regression(coeffs, initial_g, controls, reg_cfg)
    lhs, lhs_se = res.estimate.value, res.estimate.std_error
    if k_delta == reg_cfg.n_steps:
        eta = coeffs.phi
    else:
        eta = res.surrogate_at(k0 + k_delta)
    rhs = -np.inf
    rhs_se = 0.0
    for c in range(len(controls)):
        sg = backward_semigroup(
            coeffs, initial_g, ConstantControl(controls, c), delta, eta,
            SemigroupConfig(n_paths=reg_cfg.n_paths, seed=reg_cfg.seed + 7919 + c,
                            basis=reg_cfg.basis, mode=reg_cfg.mode))
        if sg.value > rhs:
            rhs, rhs_se = sg.value, sg.std_error
    residual = abs(lhs - rhs)
    t = tol if tol is not None else 3.0 * (lhs_se + rhs_se) + 1e-12
    return DppReport(lhs, rhs, residual, lhs_se, rhs_se, t, residual <= t)


@dataclass(frozen=True)
class LipschitzReport:
    max_lipschitz_ratio: float
    max_growth_ratio: float
    refined_max_lipschitz_ratio: float
    n_pairs: int

    def to_json_dict(self) -> dict:
        return {"max_lipschitz_ratio": self.max_lipschitz_ratio,
                "max_growth_ratio": self.max_growth_ratio,
                "refined_max_lipschitz_ratio": self.refined_max_lipschitz_ratio,
                "n_pairs": self.n_pairs}


def value_lipschitz_report(coeffs: CoefficientSet, controls: ControlSet, n_pairs: int,
                           n_steps_total: int, seed: int, prefix_nodes: int = 3,
                           shrink: float = 0.1) -> LipschitzReport:
    """Sampled Lipschitz and linear-growth ratios of the exact tree value.

    Path pairs share a grid; the refined ratio re-evaluates after shrinking
    each pair gap by `shrink` to expose any blow-up at small distances.
    """
    h = coeffs.horizon / n_steps_total
    remaining = n_steps_total - (prefix_nodes - 1)
    base = random_walk_paths(2 * n_pairs, coeffs.dim, h, prefix_nodes, seed=seed)

    def value(p: DiscretePath) -> float:
        return value_tree(coeffs, p, controls, remaining).value

    lip = 0.0
    lip_refined = 0.0
    growth = 0.0
    for i in range(n_pairs):
        p, q = base[2 * i], base[2 * i + 1]
        gap = float(np.max(np.linalg.norm(p.values - q.values, axis=1)))
        vp, vq = value(p), value(q)
        growth = max(growth, abs(vp) / (1.0 + sup_norm(p)), abs(vq) / (1.0 + sup_norm(q)))
        if gap == 0.0:
            continue
        lip = max(lip, abs(vp - vq) / gap)
        q2 = DiscretePath(p.values + shrink * (q.values - p.values), h,
                          continuous_origin=False)
        gap2 = gap * shrink
        lip_refined = max(lip_refined, abs(vp - value(q2)) / gap2)
    return LipschitzReport(lip, growth, lip_refined, n_pairs)
