"""Canonical JSON: sorted keys, fixed float formatting, byte-stable output.

Floats are emitted with 17 significant digits, which round-trips every
double exactly, so identical results serialize to identical bytes across
runs, platforms and worker counts.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["canonical_json", "format_float"]


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("canonical JSON does not admit non-finite floats")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return f"{x:.17g}"


def canonical_json(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"')
        out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
        return f'"{out}"'
    if isinstance(obj, np.ndarray):
        return canonical_json(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        body = ", ".join(f"{canonical_json(str(k))}: {canonical_json(v)}" for k, v in items)
        return "{" + body + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__} canonically")
