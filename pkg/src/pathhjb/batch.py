"""Vectorized view of many paths sharing one grid.

Coefficient functionals, drivers and terminal payoffs all consume a
PathBatch: values has shape (n_paths, node_count, dim) and the common
reductions (endpoint, left-Riemann running integral, running extrema)
are provided as cheap vectorized properties.
"""

from __future__ import annotations

import numpy as np

from .paths import DiscretePath

__all__ = ["PathBatch", "per_path"]


class PathBatch:
    """n paths on the grid 0, h, ..., h*(node_count-1); values (n, nodes, dim)."""

    __slots__ = ("values", "step")

    def __init__(self, values: np.ndarray, step: float):
        if values.ndim != 3:
            raise ValueError("batch values must have shape (n_paths, node_count, dim)")
        self.values = values
        self.step = step

    @staticmethod
    def from_path(p: DiscretePath, n: int = 1) -> "PathBatch":
        vals = np.broadcast_to(p.values, (n,) + p.values.shape)
        return PathBatch(vals, p.step)

    @staticmethod
    def stack(paths: list[DiscretePath]) -> "PathBatch":
        if not paths:
            raise ValueError("empty path list")
        step = paths[0].step
        n_nodes = paths[0].node_count
        if any(p.step != step or p.node_count != n_nodes for p in paths):
            raise ValueError("paths must share grid and length")
        return PathBatch(np.stack([p.values for p in paths]), step)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def node_count(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def t(self) -> float:
        return self.step * (self.node_count - 1)

    @property
    def endpoint(self) -> np.ndarray:
        """Current value per path, shape (n, dim)."""
        return self.values[:, -1, :]

    @property
    def running_integral(self) -> np.ndarray:
        """Left-Riemann integral of the path over [0, t], shape (n, dim)."""
        if self.node_count == 1:
            return np.zeros((self.n_paths, self.dim))
        return self.step * self.values[:, :-1, :].sum(axis=1)

    @property
    def running_max(self) -> np.ndarray:
        return self.values.max(axis=1)

    @property
    def running_min(self) -> np.ndarray:
        return self.values.min(axis=1)

    def sup_norm(self) -> np.ndarray:
        """Per-path sup of the Euclidean norm, shape (n,)."""
        return np.linalg.norm(self.values, axis=2).max(axis=1)

    def prefix(self, node_count: int) -> "PathBatch":
        return PathBatch(self.values[:, :node_count, :], self.step)

    def take(self, idx: np.ndarray) -> "PathBatch":
        return PathBatch(self.values[idx], self.step)

    def path(self, i: int) -> DiscretePath:
        return DiscretePath(self.values[i].copy(), self.step)

    def paths(self) -> list[DiscretePath]:
        return [self.path(i) for i in range(self.n_paths)]


def per_path(fn) -> "callable":
    """Adapt a DiscretePath -> scalar function to the batch convention.

    Evaluation loops over the batch, so prefer natively vectorized
    functionals for large path counts.
    """

    def batched(pb: PathBatch) -> np.ndarray:
        return np.array([fn(pb.path(i)) for i in range(pb.n_paths)], dtype=float)

    return batched
