"""Counter-based random streams keyed by (seed, trajectory index).

Each trajectory owns a Philox stream identified by its key alone, so draws
do not depend on batch size, chunking or the order trajectories are
processed in.  Distinct purposes (noise, exploration controls, ...) fold a
constant into the seed half of the key.
"""

from __future__ import annotations

import numpy as np

__all__ = ["trajectory_rng", "brownian_increments", "uniform_control_indices"]

_PURPOSE_NOISE = np.uint64(0)
_PURPOSE_CONTROL = np.uint64(0x9E3779B97F4A7C15)


def trajectory_rng(seed: int, traj: int, purpose: np.uint64 = _PURPOSE_NOISE) -> np.random.Generator:
    key = np.array([np.uint64(seed % (1 << 64)) ^ purpose, np.uint64(traj)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed: int, n_paths: int, n_steps: int, dim_noise: int,
                        step: float, kind: str = "gaussian") -> np.ndarray:
    """Increments of shape (n_paths, n_steps, dim_noise).

    kind "gaussian": Normal(0, step); kind "rademacher": +-sqrt(step), the
    two-point law matching the Brownian mean and variance.
    """
    out = np.empty((n_paths, n_steps, dim_noise))
    root = np.sqrt(step)
    if kind == "gaussian":
        for i in range(n_paths):
            out[i] = trajectory_rng(seed, i).standard_normal((n_steps, dim_noise)) * root
    elif kind == "rademacher":
        for i in range(n_paths):
            bits = trajectory_rng(seed, i).integers(0, 2, size=(n_steps, dim_noise))
            out[i] = (2.0 * bits - 1.0) * root
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return out


def uniform_control_indices(seed: int, n_paths: int, n_steps: int, n_controls: int) -> np.ndarray:
    """Uniform exploration control indices, shape (n_paths, n_steps)."""
    out = np.empty((n_paths, n_steps), dtype=np.int64)
    for i in range(n_paths):
        g = trajectory_rng(seed, i, purpose=_PURPOSE_CONTROL)
        out[i] = g.integers(0, n_controls, size=n_steps)
    return out
