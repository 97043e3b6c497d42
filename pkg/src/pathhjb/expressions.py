"""Restricted expression grammar for portable problem configs.

Coefficients in JSON configs are expression trees over path features
rather than arbitrary code: atoms are numbers or the named features
below, operators are n-ary "+", "*", "min", "max".  Everything evaluates
vectorized over a path batch.  Inline problems are scalar (dim 1).
"""

from __future__ import annotations

import numpy as np

from .batch import PathBatch

__all__ = ["evaluate_expression", "validate_expression", "ATOMS", "OPS"]

ATOMS = ("endpoint", "integral", "running_max", "running_min", "time",
         "control", "y", "z", "x")
OPS = ("+", "*", "min", "max")


def validate_expression(expr, allowed_atoms: tuple) -> None:
    """Reject anything outside the grammar before any computation runs."""
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return
    if isinstance(expr, str):
        if expr not in allowed_atoms:
            raise ValueError(f"unknown atom {expr!r}; allowed: {allowed_atoms}")
        return
    if isinstance(expr, list):
        if len(expr) < 2 or expr[0] not in OPS:
            raise ValueError(f"operator list must be ['+','*','min','max', args...]: {expr!r}")
        for sub in expr[1:]:
            validate_expression(sub, allowed_atoms)
        return
    raise ValueError(f"expression must be a number, atom string or operator list: {expr!r}")


def evaluate_expression(expr, pb: PathBatch, control=None, y=None, z=None,
                        x=None) -> np.ndarray:
    """Evaluate the tree to an (n_paths,) array; scalar slots broadcast."""
    m = pb.n_paths
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return np.full(m, float(expr))
    if isinstance(expr, str):
        if expr == "endpoint":
            return pb.endpoint[:, 0].copy()
        if expr == "integral":
            return pb.running_integral[:, 0].copy()
        if expr == "running_max":
            return pb.running_max[:, 0].copy()
        if expr == "running_min":
            return pb.running_min[:, 0].copy()
        if expr == "time":
            return np.full(m, pb.t)
        if expr == "control":
            if control is None:
                raise ValueError("'control' atom outside a coefficient expression")
            return np.full(m, float(control))
        if expr == "y":
            if y is None:
                raise ValueError("'y' atom outside a driver expression")
            return np.broadcast_to(np.asarray(y, dtype=float), (m,)).copy()
        if expr == "z":
            if z is None:
                raise ValueError("'z' atom outside a driver expression")
            return np.asarray(z, dtype=float)[:, 0].copy()
        if expr == "x":
            if x is None:
                raise ValueError("'x' atom outside a lifted expression")
            return np.asarray(x, dtype=float)[:, 0].copy()
        raise ValueError(f"unknown atom {expr!r}")
    op, args = expr[0], expr[1:]
    vals = [evaluate_expression(a, pb, control, y, z, x) for a in args]
    if op == "+":
        out = vals[0]
        for v in vals[1:]:
            out = out + v
        return out
    if op == "*":
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out
    if op == "min":
        return np.minimum.reduce(vals)
    if op == "max":
        return np.maximum.reduce(vals)
    raise ValueError(f"unknown operator {op!r}")
