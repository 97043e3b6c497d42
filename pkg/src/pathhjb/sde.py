"""Euler-Maruyama simulation of controlled path-dependent dynamics.

Coefficients see the whole realized prefix at each step, not just the
current state.  Noise streams are counter-based per trajectory, so a batch
is reproducible from (seed, config) and independent of chunking.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .batch import PathBatch
from .paths import DiscretePath, nodes_from_time, random_walk_paths, d_infty, sup_norm, h_norm_sq
from .rng import brownian_increments, uniform_control_indices

__all__ = [
    "CoefficientSet",
    "ControlSet",
    "ControlProcess",
    "ConstantControl",
    "ScheduleControl",
    "FeedbackControl",
    "ExplorationControl",
    "TrajectoryBatch",
    "simulate_forward",
    "validate_hypotheses",
    "moment_bound_report",
    "HypothesisReport",
    "MomentReport",
]


@dataclass(frozen=True)
class CoefficientSet:
    """Problem data: drift F, diffusion G, driver q, terminal phi, horizon T.

    Batch calling convention (pb is a PathBatch of m prefixes):
      F(pb, u) -> (m, dim);  G(pb, u) -> (m, dim, noise_dim);
      q(pb, y, z, u) -> (m,) with y (m,), z (m, noise_dim);
      phi(pb) -> (m,).
    The driver's z argument carries the noise dimension.  lipschitz_L, when
    set, is the constant the sampling validator tests the data against.
    """

    dim: int
    noise_dim: int
    F: Callable
    G: Callable
    q: Callable
    phi: Callable
    horizon: float
    lipschitz_L: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class ControlSet:
    """Finite discretization of a compact control space with its metric."""

    points: tuple
    metric: Optional[Callable] = None

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("control set must be nonempty")
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        d = self.distance
        for a in pts[: min(len(pts), 4)]:
            if d(a, a) != 0.0:
                raise ValueError("metric must vanish on the diagonal")
            for b in pts[: min(len(pts), 4)]:
                if abs(d(a, b) - d(b, a)) > 1e-12:
                    raise ValueError("metric must be symmetric")

    def distance(self, a, b) -> float:
        if self.metric is not None:
            return float(self.metric(a, b))
        return float(np.linalg.norm(np.atleast_1d(np.asarray(a, dtype=float))
                                    - np.atleast_1d(np.asarray(b, dtype=float))))

    def __len__(self) -> int:
        return len(self.points)


class ControlProcess:
    """Resolves control indices per step; subclasses see only the past prefix.

    first_row is the global index of the batch's first trajectory, so
    trajectory-keyed processes stay correct when the batch is chunked.
    """

    def __init__(self, control_set: ControlSet):
        self.control_set = control_set

    def indices(self, pb: PathBatch, step_index: int, first_row: int = 0) -> np.ndarray:
        raise NotImplementedError


class ConstantControl(ControlProcess):
    def __init__(self, control_set: ControlSet, index: int = 0):
        super().__init__(control_set)
        if not 0 <= index < len(control_set):
            raise ValueError("control index out of range")
        self.index = index

    def indices(self, pb: PathBatch, step_index: int, first_row: int = 0) -> np.ndarray:
        return np.full(pb.n_paths, self.index, dtype=np.int64)


class ScheduleControl(ControlProcess):
    """Deterministic per-step schedule of control indices."""

    def __init__(self, control_set: ControlSet, schedule: Sequence[int]):
        super().__init__(control_set)
        self.schedule = [int(i) for i in schedule]
        if any(not 0 <= i < len(control_set) for i in self.schedule):
            raise ValueError("schedule index out of range")

    def indices(self, pb: PathBatch, step_index: int, first_row: int = 0) -> np.ndarray:
        return np.full(pb.n_paths, self.schedule[step_index], dtype=np.int64)


class FeedbackControl(ControlProcess):
    """rule(pb, step_index) -> per-path control indices; adapted by construction."""

    def __init__(self, control_set: ControlSet, rule: Callable[[PathBatch, int], np.ndarray]):
        super().__init__(control_set)
        self.rule = rule

    def indices(self, pb: PathBatch, step_index: int, first_row: int = 0) -> np.ndarray:
        idx = np.asarray(self.rule(pb, step_index), dtype=np.int64)
        if idx.shape != (pb.n_paths,):
            raise ValueError("feedback rule must return one index per path")
        if idx.min() < 0 or idx.max() >= len(self.control_set):
            raise ValueError("feedback rule produced an index outside the control set")
        return idx


class ExplorationControl(ControlProcess):
    """Uniform iid control per (trajectory, step); counter-based like the noise."""

    def __init__(self, control_set: ControlSet, seed: int, n_steps: int, offset: int = 0):
        super().__init__(control_set)
        self.seed = seed
        self.n_steps = n_steps
        self.offset = offset
        self._table: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    def _ensure(self, n_rows: int):
        # rows are trajectory-keyed, so growing the table never changes
        # existing rows; the lock only guards the swap under threaded chunks
        with self._lock:
            if self._table is None or self._table.shape[0] < n_rows:
                self._table = uniform_control_indices(self.seed, n_rows, self.n_steps,
                                                      len(self.control_set))

    def indices(self, pb: PathBatch, step_index: int, first_row: int = 0) -> np.ndarray:
        self._ensure(first_row + pb.n_paths)
        return self._table[first_row : first_row + pb.n_paths, step_index - self.offset]


@dataclass
class TrajectoryBatch:
    """Simulated forward paths plus the increments and controls that drove them.

    values: (n_paths, total_nodes, dim) with nodes 0..start_index equal to
    the initial path on every row; increments: (n_paths, n_steps, noise_dim)
    for steps start_index..total_nodes-2; control_indices mirrors increments.
    """

    values: np.ndarray
    step: float
    start_index: int
    increments: Optional[np.ndarray]
    control_indices: np.ndarray
    control_set: ControlSet
    seed: int
    noise_kind: str = "gaussian"
    version: int = 1

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1 - self.start_index

    def terminal(self) -> PathBatch:
        return PathBatch(self.values, self.step)

    def prefix(self, node_count: int) -> PathBatch:
        return PathBatch(self.values[:, :node_count, :], self.step)

    def to_npz(self, path: str):
        """Columnar binary layout: a zip of .npy members, one per field.

        Written with a fixed timestamp so identical batches produce
        byte-identical files (numpy's savez stamps the current time).
        """
        arrays = {
            "version": np.int64(self.version),
            "values": self.values,
            "step": np.float64(self.step),
            "start_index": np.int64(self.start_index),
            "increments": self.increments if self.increments is not None else np.zeros(0),
            "control_indices": self.control_indices,
            "control_points": np.asarray(self.control_set.points, dtype=float),
            "seed": np.int64(self.seed),
            "noise_kind": np.array(self.noise_kind),
        }
        import io
        import zipfile

        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asanyarray(arrays[name]))
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())

    @staticmethod
    def from_npz(path: str) -> "TrajectoryBatch":
        d = np.load(path, allow_pickle=False)
        pts = tuple(float(x) for x in d["control_points"])
        inc = d["increments"]
        return TrajectoryBatch(
            values=d["values"],
            step=float(d["step"]),
            start_index=int(d["start_index"]),
            increments=None if inc.size == 0 else inc,
            control_indices=d["control_indices"],
            control_set=ControlSet(pts),
            seed=int(d["seed"]),
            noise_kind=str(d["noise_kind"]),
        )


def _check_finite(name: str, arr: np.ndarray, step_index: int):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} evaluated non-finite at step {step_index}")


def _simulate_block(coeffs: CoefficientSet, X: np.ndarray, inc: np.ndarray,
                    ctrl_idx: np.ndarray, control: ControlProcess, k0: int,
                    n_total: int, step: float, rows: slice):
    Xb = X[rows]
    incb = inc[rows]
    idxb = ctrl_idx[rows]
    for k in range(k0, n_total):
        pb = PathBatch(Xb[:, : k + 1, :], step)
        j = k - k0
        idx = control.indices(pb, k, first_row=rows.start or 0)
        idxb[:, j] = idx
        nxt = Xb[:, k, :].copy()
        for c in np.unique(idx):
            sel = idx == c
            sub = pb.take(sel)
            u = control.control_set.points[int(c)]
            Fv = np.asarray(coeffs.F(sub, u), dtype=float)
            Gv = np.asarray(coeffs.G(sub, u), dtype=float)
            _check_finite("F", Fv, k)
            _check_finite("G", Gv, k)
            nxt[sel] += Fv * step + np.einsum("mij,mj->mi", Gv, incb[sel, j, :])
        Xb[:, k + 1, :] = nxt


def simulate_forward(coeffs: CoefficientSet, initial: DiscretePath, u: ControlProcess,
                     n_paths: int, seed: int, noise: str = "gaussian",
                     workers: int = 1, increments: Optional[np.ndarray] = None) -> TrajectoryBatch:
    """Stepping rule: X(k+1) = X(k) + F(prefix, u_k) h + G(prefix, u_k) dW_k.

    The prefix [0, t] of every trajectory equals the initial path exactly.
    Noise is Normal(0, h I) or Rademacher +-sqrt(h) per component; an
    explicit increments array (n_paths, n_steps, noise_dim) overrides the
    seeded stream, which makes restarting from a realized prefix exact.
    With workers > 1 trajectories are chunked across threads; results are
    identical for any worker count because streams are keyed per trajectory.
    """
    if initial.dim != coeffs.dim:
        raise ValueError("initial path dimension does not match coefficients")
    n_total = nodes_from_time(coeffs.horizon, initial.step)
    k0 = initial.node_count - 1
    if k0 > n_total:
        raise ValueError("initial path extends beyond the horizon")
    n_steps = n_total - k0

    X = np.empty((n_paths, n_total + 1, coeffs.dim))
    X[:, : k0 + 1, :] = initial.values
    if increments is not None:
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (n_paths, n_steps, coeffs.noise_dim):
            raise ValueError(f"increments must have shape {(n_paths, n_steps, coeffs.noise_dim)}")
    else:
        inc = brownian_increments(seed, n_paths, n_steps, coeffs.noise_dim, initial.step, kind=noise)
    ctrl_idx = np.zeros((n_paths, max(n_steps, 1)), dtype=np.int64)

    if n_steps > 0:
        if workers <= 1:
            _simulate_block(coeffs, X, inc, ctrl_idx, u, k0, n_total, initial.step,
                            slice(0, n_paths))
        else:
            bounds = np.linspace(0, n_paths, workers + 1, dtype=int)
            with ThreadPoolExecutor(max_workers=workers) as ex:
                futs = [
                    ex.submit(_simulate_block, coeffs, X, inc, ctrl_idx, u, k0, n_total,
                              initial.step, slice(int(a), int(b)))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a
                ]
                for f in futs:
                    f.result()

    return TrajectoryBatch(values=X, step=initial.step, start_index=k0, increments=inc,
                           control_indices=ctrl_idx[:, :n_steps] if n_steps > 0 else ctrl_idx[:, :0],
                           control_set=u.control_set, seed=seed, noise_kind=noise)


# ---------------------------------------------------------------------------
# Sampling-based validation of the standing assumptions on the data.


@dataclass(frozen=True)
class HypothesisReport:
    """Largest observed ratio per inequality; sampling evidence, not a certificate."""

    ratios: dict
    L: float

    def passes(self, name: str) -> bool:
        return self.ratios[name] <= self.L * (1 + 1e-9)

    @property
    def passed(self) -> bool:
        return all(self.passes(name) for name in self.ratios)

    def to_json_dict(self) -> dict:
        out = {name: {"ratio": r if np.isfinite(r) else "inf", "pass": self.passes(name)}
               for name, r in self.ratios.items()}
        out["L"] = self.L
        out["passed"] = self.passed
        out["method"] = "sampling; refutes but cannot certify the constants"
        return out


def _coeff_norms(coeffs: CoefficientSet, p: DiscretePath, u) -> tuple[float, float]:
    pb = PathBatch.from_path(p)
    Fv = np.asarray(coeffs.F(pb, u), dtype=float)[0]
    Gv = np.asarray(coeffs.G(pb, u), dtype=float)[0]
    return float(np.linalg.norm(Fv)), float(np.linalg.norm(Gv))


def _driver_at(coeffs: CoefficientSet, p: DiscretePath, y: float, z: np.ndarray, u) -> float:
    pb = PathBatch.from_path(p)
    return float(np.asarray(coeffs.q(pb, np.array([y]), z[None, :], u), dtype=float)[0])


def validate_hypotheses(coeffs: CoefficientSet, controls: ControlSet, probes: int = 64,
                        seed: int = 0, include_h_growth: bool = False) -> HypothesisReport:
    """Empirically test the growth and Lipschitz bounds against lipschitz_L.

    Samples random path pairs (including zero paths and large-norm probes)
    and control pairs, and reports the worst observed ratio per inequality.
    This is sampling, not proof: it can refute a claimed constant, never
    certify one.  It reports and never raises.
    """
    if coeffs.lipschitz_L is None:
        raise ValueError("lipschitz_L must be set to validate against")
    L = coeffs.lipschitz_L
    rng = np.random.default_rng(seed)
    step = coeffs.horizon / 16
    n_nodes = 17

    paths = random_walk_paths(probes, coeffs.dim, step, n_nodes, seed=seed + 1)
    # Deterministic probes: the zero path, and ramps pushing past the scale L.
    paths.append(DiscretePath(np.zeros((n_nodes, coeffs.dim)), step, continuous_origin=True))
    for s in (0.5, 1.0, 2 * L, 4 * L):
        ramp = np.linspace(0.0, s, n_nodes)[:, None] * np.ones((1, coeffs.dim))
        paths.append(DiscretePath(ramp, step, continuous_origin=True))

    growth = 0.0
    h_growth = 0.0 if include_h_growth else None
    lip = 0.0
    qlip = 0.0
    philip = 0.0
    us = list(controls.points)

    for p in paths:
        u = us[rng.integers(0, len(us))]
        fn, gn = _coeff_norms(coeffs, p, u)
        s = sup_norm(p)
        big = max(fn, gn)
        if s == 0.0:
            growth = max(growth, np.inf if big > 0 else 0.0)
        else:
            growth = max(growth, big / s)
        if include_h_growth:
            qn = abs(_driver_at(coeffs, p, 0.0, np.zeros(coeffs.noise_dim), u))
            denom = 1.0 + float(np.linalg.norm(p.endpoint)) + np.sqrt(h_norm_sq(p))
            h_growth = max(h_growth, max(big, qn) / denom)

    n_pairs = max(probes // 2, 8)
    for _ in range(n_pairs):
        i, j = rng.integers(0, len(paths), size=2)
        p, p2 = paths[i], paths[j]
        u, u2 = (us[rng.integers(0, len(us))] for _ in range(2))
        du = controls.distance(u, u2)
        dpath = d_infty(p, p2)
        denom = dpath + du
        if denom == 0.0:
            continue
        f1, g1 = _coeff_norms(coeffs, p, u)
        pb1, pb2 = PathBatch.from_path(p), PathBatch.from_path(p2)
        F1 = np.asarray(coeffs.F(pb1, u))[0]
        F2 = np.asarray(coeffs.F(pb2, u2))[0]
        G1 = np.asarray(coeffs.G(pb1, u))[0]
        G2 = np.asarray(coeffs.G(pb2, u2))[0]
        lip = max(lip, max(np.linalg.norm(F1 - F2), np.linalg.norm(G1 - G2)) / denom)
        y, y2 = rng.standard_normal(2)
        z, z2 = rng.standard_normal((2, coeffs.noise_dim))
        q1 = _driver_at(coeffs, p, y, z, u)
        q2 = _driver_at(coeffs, p2, y2, z2, u2)
        qden = dpath + abs(y - y2) + np.linalg.norm(z - z2) + du
        if qden > 0:
            qlip = max(qlip, abs(q1 - q2) / qden)

    # Terminal functional: compare on full-horizon path pairs.
    long_paths = random_walk_paths(n_pairs, coeffs.dim, step, n_nodes, seed=seed + 2)
    long_paths += [DiscretePath(np.zeros((n_nodes, coeffs.dim)), step),
                   DiscretePath(np.full((n_nodes, coeffs.dim), 2 * L), step)]
    for a in range(len(long_paths) - 1):
        p, p2 = long_paths[a], long_paths[a + 1]
        gap = float(np.max(np.linalg.norm(p.values - p2.values, axis=1)))
        if gap == 0.0:
            continue
        v1 = float(np.asarray(coeffs.phi(PathBatch.from_path(p)))[0])
        v2 = float(np.asarray(coeffs.phi(PathBatch.from_path(p2)))[0])
        philip = max(philip, abs(v1 - v2) / gap)

    ratios = {
        "coefficient_growth": growth,
        "coefficient_lipschitz": lip,
        "driver_lipschitz": qlip,
        "terminal_lipschitz": philip,
    }
    if include_h_growth:
        ratios["h_norm_growth"] = h_growth
    return HypothesisReport(ratios, L)


@dataclass(frozen=True)
class MomentReport:
    p_exponent: int
    growth_ratio: float
    growth_ratio_se: float
    increment_max_ratio: float
    n_paths: int

    def to_json_dict(self) -> dict:
        return {
            "p_exponent": self.p_exponent,
            "growth_ratio": self.growth_ratio,
            "growth_ratio_se": self.growth_ratio_se,
            "increment_max_ratio": self.increment_max_ratio,
            "n_paths": self.n_paths,
        }


def moment_bound_report(coeffs: CoefficientSet, initial: DiscretePath, u: ControlProcess,
                        p_exponent: int, n_paths: int, seed: int,
                        n_time_probes: int = 6) -> MomentReport:
    """Empirical moment ratios for the simulated flow.

    growth_ratio estimates E sup|X|^p / (1 + sup|initial|^p); the increment
    ratio is the max over a grid of (s, r) of E sup_{[s,r]} |X - X(s)|^p
    divided by (r - s)^(p/2).  No pass threshold is attached: the constants
    the ratios would be compared to are not quantified.
    """
    if p_exponent not in (2, 4, 6):
        raise ValueError("p_exponent must be one of 2, 4, 6")
    batch = simulate_forward(coeffs, initial, u, n_paths, seed)
    full = batch.terminal()
    sups = full.sup_norm() ** p_exponent
    denom = 1.0 + sup_norm(initial) ** p_exponent
    ratio = float(np.mean(sups)) / denom
    se = float(np.std(sups, ddof=1) / np.sqrt(n_paths)) / denom

    k0 = batch.start_index
    n_total = full.node_count - 1
    nodes = np.unique(np.linspace(k0, n_total, n_time_probes, dtype=int))
    inc_ratio = 0.0
    for a in range(len(nodes) - 1):
        for b in range(a + 1, len(nodes)):
            ks, kr = int(nodes[a]), int(nodes[b])
            seg = full.values[:, ks : kr + 1, :] - full.values[:, ks : ks + 1, :]
            m = np.linalg.norm(seg, axis=2).max(axis=1) ** p_exponent
            dt = (kr - ks) * batch.step
            inc_ratio = max(inc_ratio, float(np.mean(m)) / dt ** (p_exponent / 2))
    return MomentReport(p_exponent, ratio, se, inc_ratio, n_paths)
