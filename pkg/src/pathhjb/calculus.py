"""Functional derivatives on path space and the pathwise Ito residual.

The vertical derivative differentiates through a bump of the final path
value; the horizontal derivative differentiates through freezing the path
forward in time by one or more grid steps.  Bumped paths are generally
discontinuous, and every functional handled here must accept them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .paths import (ClassGSpec, DiscretePath, horizontal_extend, nodes_from_time,
                    random_walk_paths, vertical_bump)

__all__ = [
    "FunctionalHandle",
    "FDConfig",
    "ResidualStats",
    "vertical_derivative",
    "second_vertical",
    "horizontal_derivative",
    "class_g_time_derivative",
    "ito_residual",
    "add_handles",
]


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference steps: vertical bump size, horizontal grid steps.

    scheme "central" differences the bump symmetrically (exact for
    functionals quadratic in the endpoint); "forward" uses the one-sided
    quotient matching the derivative's defining limit.
    """

    h_vertical: float = 1e-4
    n_horizontal_steps: int = 1
    scheme: str = "central"

    def __post_init__(self):
        if self.h_vertical <= 0:
            raise ValueError("h_vertical must be positive")
        if self.n_horizontal_steps < 1:
            raise ValueError("n_horizontal_steps must be a positive integer")
        if self.scheme not in ("central", "forward"):
            raise ValueError("scheme must be 'central' or 'forward'")


@dataclass(frozen=True)
class FunctionalHandle:
    """A scalar functional of a path with optional analytic derivatives.

    dt, dx, dxx, when given, are checked against finite differences on
    random probe paths at construction.  growth_degree records the
    polynomial growth exponent of the functional and its derivatives.
    The batch_* fields are optional vectorized twins used by the
    trajectory-level operations; they must agree with the per-path eval.
    """

    eval: Callable[[DiscretePath], float]
    dt: Optional[Callable[[DiscretePath], float]] = None
    dx: Optional[Callable[[DiscretePath], np.ndarray]] = None
    dxx: Optional[Callable[[DiscretePath], np.ndarray]] = None
    growth_degree: int = 2
    dim: int = 1
    batch_eval: Optional[Callable[[PathBatch], np.ndarray]] = None
    batch_dt: Optional[Callable[[PathBatch], np.ndarray]] = None
    batch_dx: Optional[Callable[[PathBatch], np.ndarray]] = None
    batch_dxx: Optional[Callable[[PathBatch], np.ndarray]] = None
    check_derivatives: bool = True
    check_tol: float = 1e-3

    def __post_init__(self):
        if self.growth_degree < 0:
            raise ValueError("growth_degree must be nonnegative")
        if self.check_derivatives and (self.dt or self.dx or self.dxx):
            self._probe_consistency()

    def _probe_consistency(self):
        cfg = FDConfig()
        probes = random_walk_paths(10, self.dim, 1.0 / 16, 9, seed=20240 + self.dim)
        for p in probes:
            val = self.eval(p)
            tol = max(1e-6, self.check_tol * abs(val), self.check_tol)
            if self.dx is not None:
                fd = _fd_vertical(self.eval, p, cfg)
                if np.max(np.abs(np.asarray(self.dx(p), dtype=float) - fd)) > tol:
                    raise ValueError("analytic dx disagrees with finite differences")
            if self.dxx is not None:
                fd = _fd_second_vertical(self.eval, p, cfg)
                if np.max(np.abs(np.asarray(self.dxx(p), dtype=float) - fd)) > max(tol, 1e-2 * max(1.0, abs(val))):
                    raise ValueError("analytic dxx disagrees with finite differences")
            if self.dt is not None:
                fd = _fd_horizontal(self.eval, p, cfg)
                # One-sided quotient carries an O(h) error; allow a loose band.
                if abs(float(self.dt(p)) - fd) > max(0.05 * max(1.0, abs(val)), 10 * tol):
                    raise ValueError("analytic dt disagrees with finite differences")


def _fd_vertical(f: Callable[[DiscretePath], float], p: DiscretePath, cfg: FDConfig) -> np.ndarray:
    h = cfg.h_vertical
    d = p.dim
    out = np.empty(d)
    base = f(p) if cfg.scheme == "forward" else None
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        up = f(vertical_bump(p, e))
        if cfg.scheme == "central":
            down = f(vertical_bump(p, -e))
            out[i] = (up - down) / (2 * h)
        else:
            out[i] = (up - base) / h
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite vertical derivative")
    return out


def _fd_second_vertical(f: Callable[[DiscretePath], float], p: DiscretePath,
                        cfg: FDConfig) -> np.ndarray:
    h = cfg.h_vertical
    d = p.dim
    out = np.empty((d, d))
    f0 = f(p)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[i, i] = (f(vertical_bump(p, ei)) - 2 * f0 + f(vertical_bump(p, -ei))) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            pp = f(vertical_bump(p, ei + ej))
            pm = f(vertical_bump(p, ei - ej))
            mp = f(vertical_bump(p, -ei + ej))
            mm = f(vertical_bump(p, -ei - ej))
            out[i, j] = out[j, i] = (pp - pm - mp + mm) / (4 * h**2)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite second vertical derivative")
    return 0.5 * (out + out.T)


def _fd_horizontal(f: Callable[[DiscretePath], float], p: DiscretePath, cfg: FDConfig) -> float:
    h = cfg.n_horizontal_steps * p.step
    out = (f(horizontal_extend(p, h)) - f(p)) / h
    if not np.isfinite(out):
        raise ValueError("non-finite horizontal derivative")
    return float(out)


def vertical_derivative(f: FunctionalHandle, p: DiscretePath,
                        cfg: FDConfig = FDConfig()) -> np.ndarray:
    """Gradient of f with respect to a bump of the final path value."""
    return _fd_vertical(f.eval, p, cfg)


def second_vertical(f: FunctionalHandle, p: DiscretePath,
                    cfg: FDConfig = FDConfig()) -> np.ndarray:
    """Symmetrized second-difference Hessian at the final node."""
    return _fd_second_vertical(f.eval, p, cfg)


def horizontal_derivative(f: FunctionalHandle, p: DiscretePath,
                          cfg: FDConfig = FDConfig(), horizon: float | None = None) -> float:
    """Forward difference through freezing the path for n_horizontal_steps.

    The quotient is one-sided, matching the defining right limit.  At the
    final horizon there is no room to extend: the convention is to evaluate
    at the one-step-shorter prefix, which is the caller's responsibility
    (a horizon argument only guards against silent extension past it).
    """
    if horizon is not None:
        h = cfg.n_horizontal_steps * p.step
        if p.node_count - 1 + cfg.n_horizontal_steps > nodes_from_time(horizon, p.step):
            raise ValueError(f"extension by {h} exceeds horizon {horizon}")
    return _fd_horizontal(f.eval, p, cfg)


def _analytic_or_fd(f: FunctionalHandle, p: DiscretePath, cfg: FDConfig):
    """(value, dt, dx, dxx) using analytic callbacks where available."""
    val = float(f.eval(p))
    dt = float(f.dt(p)) if f.dt is not None else _fd_horizontal(f.eval, p, cfg)
    dx = (np.asarray(f.dx(p), dtype=float) if f.dx is not None
          else _fd_vertical(f.eval, p, cfg))
    dxx = (np.asarray(f.dxx(p), dtype=float) if f.dxx is not None
           else _fd_second_vertical(f.eval, p, cfg))
    return val, dt, dx, dxx


def class_g_time_derivative(spec: ClassGSpec, p: DiscretePath) -> float:
    """Closed-form time derivative of g0(t, ||path - extended anchor||_H^2).

    Freezing the path by h grows the squared-H gap by h times the squared
    distance between the current endpoint and the anchor's final value, so
    the time derivative is g0_t + g0_y * |p(t) - anchor(t_hat)|^2.
    """
    y = spec._h_gap_sq(p)
    gap = p.values[-1] - spec.anchor.values[-1]
    gap_sq = float(np.dot(gap, gap))
    return float(spec.g0_t(p.t, y) + spec.g0_y(p.t, y) * gap_sq)


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    std_error: float
    n: int
    rms: float

    def to_json_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n, "rms": self.rms}


def ito_residual(f: FunctionalHandle, coeffs, batch, cfg: FDConfig = FDConfig()) -> ResidualStats:
    """Pathwise defect of the functional change-of-variables formula.

    Per trajectory: f at the terminal path minus f at the initial path,
    minus the time-integrated drift terms (horizontal derivative, gradient
    against the drift, half trace of the Hessian against the diffusion
    covariance) and the stochastic sum of gradient against diffusion times
    the stored increments.  Returns mean, standard error and RMS across the
    batch; a zero mean within noise is the expected outcome for smooth f.
    """
    if batch.increments is None:
        raise ValueError("trajectory batch has no stored increments")
    values = batch.values
    m, n_nodes, d = values.shape
    k0 = batch.start_index
    n_steps = n_nodes - 1 - k0
    h = batch.step

    full = PathBatch(values, h)
    f_T = _batch_eval(f, full)
    f_0 = _batch_eval(f, full.prefix(k0 + 1))
    residual = f_T - f_0

    for j in range(n_steps):
        k = k0 + j
        pb = full.prefix(k + 1)
        dt, dx, dxx = _batch_derivatives(f, pb, cfg)
        Fv, Gv = _eval_coeffs_grouped(coeffs, pb, batch, j)
        dW = batch.increments[:, j, :]
        cov = np.einsum("mij,mkj->mik", Gv, Gv)
        drift = dt + np.einsum("mi,mi->m", dx, Fv) + 0.5 * np.einsum("mij,mji->m", dxx, cov)
        noise = np.einsum("mi,mij,mj->m", dx, Gv, dW)
        residual -= drift * h + noise

    mean = float(np.mean(residual))
    se = float(np.std(residual, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    rms = float(np.sqrt(np.mean(residual**2)))
    return ResidualStats(mean, se, m, rms)


def _batch_eval(f: FunctionalHandle, pb: PathBatch) -> np.ndarray:
    if f.batch_eval is not None:
        return np.asarray(f.batch_eval(pb), dtype=float)
    return np.array([f.eval(pb.path(i)) for i in range(pb.n_paths)], dtype=float)


def _batch_derivatives(f: FunctionalHandle, pb: PathBatch, cfg: FDConfig):
    m, d = pb.n_paths, pb.dim
    if f.batch_dt is not None and f.batch_dx is not None and f.batch_dxx is not None:
        dt = np.asarray(f.batch_dt(pb), dtype=float)
        dx = np.asarray(f.batch_dx(pb), dtype=float)
        dxx = np.asarray(f.batch_dxx(pb), dtype=float)
        return dt, dx.reshape(m, d), dxx.reshape(m, d, d)
    dt = np.empty(m)
    dx = np.empty((m, d))
    dxx = np.empty((m, d, d))
    for i in range(m):
        p = pb.path(i)
        _, dt[i], dx[i], dxx[i] = _analytic_or_fd(f, p, cfg)
    return dt, dx, dxx


def _eval_coeffs_grouped(coeffs, pb: PathBatch, batch, j: int):
    """Drift (m, d) and diffusion (m, d, n) at step j, grouped by control."""
    m = pb.n_paths
    d, n = coeffs.dim, coeffs.noise_dim
    Fv = np.empty((m, d))
    Gv = np.empty((m, d, n))
    idx = batch.control_indices[:, j]
    for c in np.unique(idx):
        sel = idx == c
        sub = pb.take(sel)
        u = batch.control_set.points[int(c)]
        Fv[sel] = coeffs.F(sub, u)
        Gv[sel] = coeffs.G(sub, u)
    return Fv, Gv


def add_handles(a: FunctionalHandle, b: FunctionalHandle, wa: float = 1.0,
                wb: float = 1.0, cfg: FDConfig = FDConfig()) -> FunctionalHandle:
    """Weighted sum of two handles; derivatives combine analytic-or-FD parts."""

    def d_of(h: FunctionalHandle, kind: str):
        def getter(p: DiscretePath):
            val_dt_dx_dxx = _analytic_or_fd(h, p, cfg)
            return {"dt": val_dt_dx_dxx[1], "dx": val_dt_dx_dxx[2], "dxx": val_dt_dx_dxx[3]}[kind]
        return getter

    return FunctionalHandle(
        eval=lambda p: wa * a.eval(p) + wb * b.eval(p),
        dt=lambda p: wa * d_of(a, "dt")(p) + wb * d_of(b, "dt")(p),
        dx=lambda p: wa * np.asarray(d_of(a, "dx")(p)) + wb * np.asarray(d_of(b, "dx")(p)),
        dxx=lambda p: wa * np.asarray(d_of(a, "dxx")(p)) + wb * np.asarray(d_of(b, "dxx")(p)),
        growth_degree=max(a.growth_degree, b.growth_degree),
        dim=a.dim,
        check_derivatives=False,
    )
