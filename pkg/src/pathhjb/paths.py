"""Discrete path space: uniform-grid paths, norms, metrics and path surgeries.

A path is a vector-valued function sampled on the uniform grid
0, h, 2h, ..., t.  All suprema and integrals used elsewhere in the package
are taken over grid nodes; the cadlag piecewise-constant reading of a path
makes the squared-H norm a left Riemann sum and makes a bump of the final
value invisible to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DiscretePath",
    "HolderBallSpec",
    "ClassGSpec",
    "BallMembership",
    "sup_norm",
    "d_infty",
    "h_norm_sq",
    "holder_seminorm",
    "in_holder_ball",
    "horizontal_extend",
    "vertical_bump",
    "perturb",
    "concat_brownian",
    "nodes_from_time",
    "zero_path",
    "path_from_function",
    "random_walk_paths",
    "sample_ball_paths",
]

# Relative slack for grid-multiple checks on float times.
_GRID_RTOL = 1e-9


def nodes_from_time(duration: float, step: float) -> int:
    """Number of grid steps spanning `duration`, which must be a grid multiple."""
    k = duration / step
    k_int = int(round(k))
    if abs(k - k_int) > _GRID_RTOL * max(1.0, abs(k)):
        raise ValueError(f"duration {duration} is not a multiple of step {step}")
    if k_int < 0:
        raise ValueError("duration must be nonnegative")
    return k_int


@dataclass(frozen=True)
class DiscretePath:
    """A path on the uniform grid 0, h, ..., h*(node_count-1).

    values has shape (node_count, dim).  Time is carried by the node count,
    so grid-multiple and length comparisons are exact integer checks.
    A path flagged `continuous_origin` starts at the origin (values[0] == 0).
    """

    values: np.ndarray
    step: float
    continuous_origin: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("values must have shape (node_count, dim) with node_count >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if not (self.step > 0 and np.isfinite(self.step)):
            raise ValueError("step must be positive and finite")
        if self.continuous_origin and np.any(v[0] != 0.0):
            raise ValueError("continuous_origin path must start at 0")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> float:
        """Final time step*(node_count-1)."""
        return self.step * (self.node_count - 1)

    @property
    def endpoint(self) -> np.ndarray:
        return self.values[-1]

    def same_grid(self, other: "DiscretePath") -> bool:
        return self.dim == other.dim and self.step == other.step

    def to_json_dict(self) -> dict:
        return {"dim": self.dim, "step": self.step, "values": self.values.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "DiscretePath":
        return DiscretePath(np.asarray(d["values"], dtype=float), float(d["step"]))


def zero_path(dim: int, step: float, node_count: int = 1) -> DiscretePath:
    return DiscretePath(np.zeros((node_count, dim)), step, continuous_origin=True)


def path_from_function(f: Callable[[float], np.ndarray], step: float, node_count: int,
                       dim: int = 1) -> DiscretePath:
    """Sample f on the grid; f maps a time to a scalar or a dim-vector."""
    vals = np.array([np.broadcast_to(f(step * k), (dim,)) for k in range(node_count)], dtype=float)
    return DiscretePath(vals, step)


@dataclass(frozen=True)
class HolderBallSpec:
    """Hölder ball: paths with t >= t0, sup norm <= m0 and alpha-seminorm <= mu.

    alpha may be anything in (0, 1]; constructors in this package default to
    values below 1/2, the regime in which the ball is used downstream.
    """

    alpha: float = 0.25
    mu: float = 1.0
    m0: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.mu <= 0 or self.m0 <= 0:
            raise ValueError("mu and m0 must be positive")
        if self.t0 < 0:
            raise ValueError("t0 must be nonnegative")


@dataclass(frozen=True)
class BallMembership:
    ok: bool
    reason: str
    sup_norm: float
    seminorm: float


def sup_norm(p: DiscretePath) -> float:
    """Max over grid nodes of the Euclidean norm of the path value."""
    return float(np.max(np.linalg.norm(p.values, axis=1)))


def _extend_values(values: np.ndarray, n_extra: int) -> np.ndarray:
    if n_extra == 0:
        return values
    tail = np.repeat(values[-1:, :], n_extra, axis=0)
    return np.concatenate([values, tail], axis=0)


def d_infty(p: DiscretePath, q: DiscretePath) -> float:
    """Time gap plus sup distance, the shorter path frozen at its final value."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    if p.step != q.step:
        raise ValueError(f"step mismatch: {p.step} vs {q.step}")
    n = max(p.node_count, q.node_count)
    pv = _extend_values(p.values, n - p.node_count)
    qv = _extend_values(q.values, n - q.node_count)
    gap = float(np.max(np.linalg.norm(pv - qv, axis=1)))
    return abs(p.t - q.t) + gap


def h_norm_sq(p: DiscretePath) -> float:
    """Left Riemann sum of |path|^2 over [0, t]; the final node is excluded."""
    if p.node_count == 1:
        return 0.0
    return float(p.step * np.sum(p.values[:-1] ** 2))


def holder_seminorm(p: DiscretePath, alpha: float) -> float:
    """Max over node pairs s < r of |p(s) - p(r)| / (r - s)^alpha.

    A single-node path has seminorm 0.
    """
    n = p.node_count
    if n < 2:
        return 0.0
    best = 0.0
    v = p.values
    # O(n^2) over node pairs, vectorized by lag.
    for lag in range(1, n):
        diffs = np.linalg.norm(v[lag:] - v[:-lag], axis=1)
        denom = (lag * p.step) ** alpha
        m = float(np.max(diffs)) / denom
        if m > best:
            best = m
    return best


def in_holder_ball(p: DiscretePath, spec: HolderBallSpec) -> BallMembership:
    """Membership with a diagnostic naming the first violated clause."""
    s = sup_norm(p)
    semi = holder_seminorm(p, spec.alpha)
    if p.t < spec.t0 - 1e-12 * max(1.0, spec.t0):
        return BallMembership(False, f"final time {p.t} < t0 {spec.t0}", s, semi)
    if s > spec.m0:
        return BallMembership(False, f"sup norm {s} > m0 {spec.m0}", s, semi)
    if semi > spec.mu:
        return BallMembership(False, f"Hölder seminorm {semi} > mu {spec.mu}", s, semi)
    return BallMembership(True, "", s, semi)


def horizontal_extend(p: DiscretePath, delta: float) -> DiscretePath:
    """Append nodes frozen at the final value; delta must be a grid multiple."""
    k = nodes_from_time(delta, p.step)
    if k == 0:
        return p
    return DiscretePath(_extend_values(p.values, k), p.step,
                        continuous_origin=p.continuous_origin)


def vertical_bump(p: DiscretePath, v: np.ndarray) -> DiscretePath:
    """Shift the final value by v; earlier nodes untouched.

    The result is generally discontinuous at t, so the origin flag is dropped
    only if the bump lands on node 0 of a single-node path.
    """
    v = np.broadcast_to(np.asarray(v, dtype=float), (p.dim,))
    if not np.all(np.isfinite(v)):
        raise ValueError("bump must be finite")
    vals = p.values.copy()
    vals[-1] = vals[-1] + v
    origin = p.continuous_origin and (p.node_count > 1 or np.all(vals[0] == 0.0))
    return DiscretePath(vals, p.step, continuous_origin=origin)


def perturb(p: DiscretePath, eps: float, spec: HolderBallSpec) -> DiscretePath:
    """Pull nodes outside the (mu-eps) Hölder cone around the endpoint onto it.

    Nodes with |p(s) - p(t)| <= (mu-eps)(t-s)^alpha are kept; others are
    replaced by p(t) + (mu-eps)(t-s)^alpha * unit(p(s) - p(t)).  The final
    node always satisfies the kept branch, so the endpoint and final time
    are preserved.  Note the output need not start at the origin.
    """
    if not (0.0 < eps <= spec.mu / 2.0):
        raise ValueError(f"eps must lie in (0, mu/2]; got {eps} with mu={spec.mu}")
    member = in_holder_ball(p, spec)
    if not member.ok:
        raise ValueError(f"path not in Hölder ball: {member.reason}")
    end = p.values[-1]
    n = p.node_count
    gaps = p.values - end
    dist = np.linalg.norm(gaps, axis=1)
    ages = (np.arange(n - 1, -1, -1) * p.step) ** spec.alpha
    radius = (spec.mu - eps) * ages
    out = p.values.copy()
    # Strict inequality: a node already on the cone boundary is kept, and the
    # unit direction is never evaluated at zero distance.
    mask = dist > radius
    if np.any(mask):
        out[mask] = end + (radius[mask] / dist[mask])[:, None] * gaps[mask]
    return DiscretePath(out, p.step)


def concat_brownian(p: DiscretePath, increments: np.ndarray, horizon: float) -> DiscretePath:
    """Continue p beyond t by cumulative increments: the driver path on (t, horizon]."""
    increments = np.asarray(increments, dtype=float)
    if increments.ndim == 1:
        increments = increments[:, None]
    k = nodes_from_time(horizon - p.t, p.step)
    if increments.shape != (k, p.dim):
        raise ValueError(f"need {k} increments of dim {p.dim}, got {increments.shape}")
    if k == 0:
        return p
    tail = p.values[-1] + np.cumsum(increments, axis=0)
    vals = np.concatenate([p.values, tail], axis=0)
    return DiscretePath(vals, p.step, continuous_origin=p.continuous_origin)


@dataclass(frozen=True)
class ClassGSpec:
    """Scalar functional g0(t, ||path - extended anchor||_H^2) with its partials.

    g0_t and g0_y are the partial derivatives in the first and second slot;
    they are spot-checked against finite differences at construction.
    """

    g0: Callable[[float, float], float]
    g0_t: Callable[[float, float], float]
    g0_y: Callable[[float, float], float]
    anchor: DiscretePath
    fd_check_tol: float = field(default=1e-4)

    def __post_init__(self):
        h = 1e-6
        for t, y in [(0.1, 0.0), (0.4, 0.7), (0.9, 2.3)]:
            g = self.g0(t, y)
            fd_t = (self.g0(t + h, y) - self.g0(t - h, y)) / (2 * h)
            fd_y = (self.g0(t, y + h) - self.g0(t, y - h)) / (2 * h)
            scale = max(1.0, abs(g))
            if abs(fd_t - self.g0_t(t, y)) > self.fd_check_tol * scale:
                raise ValueError(f"g0_t inconsistent with finite differences at ({t}, {y})")
            if abs(fd_y - self.g0_y(t, y)) > self.fd_check_tol * scale:
                raise ValueError(f"g0_y inconsistent with finite differences at ({t}, {y})")

    @property
    def t_hat(self) -> float:
        return self.anchor.t

    def value(self, p: DiscretePath) -> float:
        y = self._h_gap_sq(p)
        return float(self.g0(p.t, y))

    def _h_gap_sq(self, p: DiscretePath) -> float:
        if p.step != self.anchor.step or p.dim != self.anchor.dim:
            raise ValueError("path and anchor must share grid and dimension")
        if p.node_count < self.anchor.node_count:
            raise ValueError("path shorter than anchor")
        a = _extend_values(self.anchor.values, p.node_count - self.anchor.node_count)
        diff = DiscretePath(p.values - a, p.step)
        return h_norm_sq(diff)


# ---------------------------------------------------------------------------
# Random path generation (shared by the Hölder-ball checks, hypothesis
# validators and the test suite).

def random_walk_paths(n: int, dim: int, step: float, node_count: int, seed: int,
                      scale: float = 1.0) -> list[DiscretePath]:
    """n scaled random-walk paths started at the origin."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        inc = rng.standard_normal((node_count - 1, dim)) * np.sqrt(step) * scale
        vals = np.concatenate([np.zeros((1, dim)), np.cumsum(inc, axis=0)], axis=0)
        out.append(DiscretePath(vals, step, continuous_origin=True))
    return out


def sample_ball_paths(spec: HolderBallSpec, n: int, dim: int, step: float,
                      horizon: float, seed: int, include_probes: bool = True,
                      margin: float = 0.95, rescale: bool = True) -> list[DiscretePath]:
    """Random-walk paths rescaled into the Hölder ball, of varying lengths.

    Scaling a path scales its sup norm and seminorm linearly, so dividing by
    the violated ratios lands inside the ball with a safety margin.
    Deterministic probes (zero path and linear ramps) are appended so the
    sample never misses the trivial members.  With rescale=False offending
    walks are rejected instead, which can yield an empty sample and is how
    a vacuous ball surfaces.
    """
    rng = np.random.default_rng(seed)
    n_total = nodes_from_time(horizon, step)
    n_min = max(nodes_from_time(spec.t0, step), 1)
    out = []
    for _ in range(n):
        k = int(rng.integers(n_min, n_total + 1))
        inc = rng.standard_normal((k, dim)) * np.sqrt(step)
        vals = np.concatenate([np.zeros((1, dim)), np.cumsum(inc, axis=0)], axis=0)
        p = DiscretePath(vals, step, continuous_origin=True)
        if not rescale:
            if in_holder_ball(p, spec).ok:
                out.append(p)
            continue
        s = sup_norm(p)
        semi = holder_seminorm(p, spec.alpha)
        factor = margin * min(spec.m0 / s if s > 0 else np.inf,
                              spec.mu / semi if semi > 0 else np.inf)
        factor = min(1.0, factor)
        out.append(DiscretePath(vals * factor, step, continuous_origin=True))
    if include_probes:
        for k in {n_min, n_total}:
            out.append(zero_path(dim, step, k + 1))
            ramp = np.linspace(0.0, 1.0, k + 1)[:, None] * np.ones((1, dim))
            r = DiscretePath(ramp, step, continuous_origin=True)
            s, semi = sup_norm(r), holder_seminorm(r, spec.alpha)
            factor = margin * min(spec.m0 / s, spec.mu / semi, 1.0 / margin)
            out.append(DiscretePath(ramp * factor, step, continuous_origin=True))
    return out
