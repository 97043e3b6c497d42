"""Command-line entry point: configs in, solver runs out, machine-readable results.

Exit codes: 0 success, 2 a requested check failed, 1 config or runtime
error.  JSON artifacts are canonical (sorted keys, 17-significant-digit
floats) so identical configs and seeds produce byte-identical output; the
PATHHJB_SEED environment variable overrides any configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .batch import PathBatch
from .bsde import solve_bsde
from .calculus import FDConfig, horizontal_derivative, second_vertical, vertical_derivative
from .control import RegressionValueConfig, dpp_residual, value_regression, value_tree
from .expressions import evaluate_expression, validate_expression
from .lift import LiftedProblem, shjb_value
from dataclasses import dataclass

from .paths import DiscretePath, HolderBallSpec, zero_path
from .problems import PROBLEM_IDS, ProblemSpec, make_problem
from .paths import sample_ball_paths
from .sde import CoefficientSet, ConstantControl, ControlSet, simulate_forward
from .serialize import canonical_json
from .viscosity import mu_limit_sweep, penalty_test_functional

OUTPUT_VERSION = 1

_ALIASES = {"P1": "P1_frozen", "P2": "P2_drift_control",
            "P3": "P3_running_integral", "P4": "P4_multiplicative"}

_CONFIG_KEYS = {
    "problem", "solver", "steps", "paths", "seed", "delta", "mu", "alpha", "m0",
    "samples", "out", "workers", "side", "control_index", "tol", "noise", "weight",
    "path", "x0",
}

_PATH_ATOMS = ("endpoint", "integral", "running_max", "running_min", "time")
_COEFF_ATOMS = _PATH_ATOMS + ("control",)
_DRIVER_ATOMS = _COEFF_ATOMS + ("y", "z")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LiftedRun:
    """An inline lifted problem with its control set and initial state."""

    problem: LiftedProblem
    controls: ControlSet
    x0: float


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    return cfg


def _build_inline_problem(spec: dict) -> ProblemSpec | LiftedProblem:
    """Inline problems are scalar; coefficients are grammar expressions."""
    if not isinstance(spec, dict):
        raise ConfigError("inline problem must be a JSON object")
    if spec.get("lifted", False):
        keys = {"lifted", "horizon", "bar_F", "bar_G", "bar_q", "bar_phi", "controls", "x0"}
        unknown = set(spec) - keys
        if unknown:
            raise ConfigError(f"unknown lifted problem field(s): {sorted(unknown)}")
        for name in ("bar_F", "bar_G", "bar_q", "bar_phi"):
            if name not in spec:
                raise ConfigError(f"lifted problem missing field: {name}")
        atoms = {"bar_F": _COEFF_ATOMS + ("x",), "bar_G": _COEFF_ATOMS + ("x",),
                 "bar_q": _DRIVER_ATOMS + ("x",), "bar_phi": _PATH_ATOMS + ("x",)}
        for name, allowed in atoms.items():
            validate_expression(spec[name], allowed)
        hor = float(spec.get("horizon", 1.0))
        controls = ControlSet(tuple(float(c) for c in spec.get("controls", [0.0])))
        fF, fG = spec["bar_F"], spec["bar_G"]
        fq, fphi = spec["bar_q"], spec["bar_phi"]
        lp = LiftedProblem(
            dim_noise=1, dim_state=1,
            bar_F=lambda om, x, u: evaluate_expression(fF, om, control=u, x=x)[:, None],
            bar_G=lambda om, x, u: evaluate_expression(fG, om, control=u, x=x)[:, None, None],
            bar_q=lambda om, x, y, z, u: evaluate_expression(fq, om, control=u, y=y, z=z, x=x),
            bar_phi=lambda om, x: evaluate_expression(fphi, om, x=x),
            horizon=hor)
        return LiftedRun(lp, controls, float(spec.get("x0", 0.0)))

    keys = {"horizon", "F", "G", "q", "phi", "controls", "lifted"}
    unknown = set(spec) - keys
    if unknown:
        raise ConfigError(f"unknown inline problem field(s): {sorted(unknown)}")
    for name in ("F", "G", "q", "phi"):
        if name not in spec:
            raise ConfigError(f"inline problem missing field: {name}")
    validate_expression(spec["F"], _COEFF_ATOMS)
    validate_expression(spec["G"], _COEFF_ATOMS)
    validate_expression(spec["q"], _DRIVER_ATOMS)
    validate_expression(spec["phi"], _PATH_ATOMS)
    controls = tuple(float(c) for c in spec.get("controls", [0.0]))
    if not controls:
        raise ConfigError("controls must be nonempty")
    hor = float(spec.get("horizon", 1.0))
    fF, fG, fq, fphi = spec["F"], spec["G"], spec["q"], spec["phi"]
    coeffs = CoefficientSet(
        dim=1, noise_dim=1,
        F=lambda pb, u: evaluate_expression(fF, pb, control=u)[:, None],
        G=lambda pb, u: evaluate_expression(fG, pb, control=u)[:, None, None],
        q=lambda pb, y, z, u: evaluate_expression(fq, pb, control=u, y=y, z=z),
        phi=lambda pb: evaluate_expression(fphi, pb),
        horizon=hor)

    def analytic_phi(p: DiscretePath) -> float:
        return float(evaluate_expression(fphi, PathBatch.from_path(p))[0])

    return ProblemSpec("inline", coeffs, ControlSet(controls), analytic_phi,
                       note="inline expression problem")


def _resolve_problem(cfg: dict, args) -> ProblemSpec | LiftedRun:
    prob = getattr(args, "problem", None) or cfg.get("problem")
    if prob is None:
        raise ConfigError("no problem given (flag --problem or config field)")
    if isinstance(prob, str):
        pid = _ALIASES.get(prob, prob)
        if pid not in PROBLEM_IDS:
            raise ConfigError(f"unknown problem {prob!r}; builtin ids: "
                              f"{sorted(_ALIASES)} or {list(PROBLEM_IDS)}")
        return make_problem(pid)
    return _build_inline_problem(prob)


def _setting(args, cfg: dict, name: str, default):
    val = getattr(args, name, None)
    if val is not None:
        return val
    if name in cfg:
        return cfg[name]
    return default


def _seed(args, cfg: dict) -> int:
    env = os.environ.get("PATHHJB_SEED")
    if env is not None:
        return int(env)
    return int(_setting(args, cfg, "seed", 0))


def _emit(obj: dict, out: str | None):
    obj = dict(obj)
    obj["version"] = OUTPUT_VERSION
    text = canonical_json(obj) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _load_initial(cfg: dict, args, step: float) -> DiscretePath:
    path_file = _setting(args, cfg, "path", None)
    if path_file is None:
        return zero_path(1, step, 1)
    with open(path_file) as fh:
        return DiscretePath.from_json_dict(json.load(fh))


def _cmd_simulate(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    if isinstance(spec, LiftedRun):
        raise ConfigError("lifted configs support the value subcommand only")
    steps = int(_setting(args, cfg, "steps", 16))
    paths = int(_setting(args, cfg, "paths", 1024))
    workers = int(_setting(args, cfg, "workers", 1))
    noise = _setting(args, cfg, "noise", "gaussian")
    cidx = int(_setting(args, cfg, "control_index", 0))
    seed = _seed(args, cfg)
    initial = _load_initial(cfg, args, spec.coeffs.horizon / steps)
    batch = simulate_forward(spec.coeffs, initial, ConstantControl(spec.controls, cidx),
                             paths, seed, noise=noise, workers=workers)
    out = _setting(args, cfg, "out", None)
    if out is None:
        raise ConfigError("simulate requires --out FILE for the trajectory container")
    batch.to_npz(out)
    print(f"wrote {paths} trajectories x {batch.n_steps} steps to {out}", file=sys.stderr)
    return 0


def _cmd_bsde(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    if isinstance(spec, LiftedRun):
        raise ConfigError("lifted configs support the value subcommand only")
    steps = int(_setting(args, cfg, "steps", 64))
    paths = int(_setting(args, cfg, "paths", 10000))
    cidx = int(_setting(args, cfg, "control_index", 0))
    seed = _seed(args, cfg)
    initial = _load_initial(cfg, args, spec.coeffs.horizon / steps)
    batch = simulate_forward(spec.coeffs, initial, ConstantControl(spec.controls, cidx),
                             paths, seed)
    sol = solve_bsde(batch, spec.coeffs.q, spec.coeffs.phi)
    _emit(sol.to_json_dict(), _setting(args, cfg, "out", None))
    return 0


def _cmd_value(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    solver = _setting(args, cfg, "solver", "tree")
    steps = int(_setting(args, cfg, "steps", 8))
    seed = _seed(args, cfg)
    if isinstance(spec, LiftedRun):
        x0 = float(_setting(args, cfg, "x0", spec.x0))
        om0 = zero_path(1, spec.problem.horizon / steps, 1)
        if solver == "tree":
            est = shjb_value(spec.problem, om0, np.array([x0]), spec.controls,
                             solver="tree", n_steps=steps)
        else:
            paths = int(_setting(args, cfg, "paths", 4096))
            est = shjb_value(spec.problem, om0, np.array([x0]), spec.controls,
                             solver="regression", n_steps=steps,
                             reg_cfg=RegressionValueConfig(steps, paths, seed))
        _emit(est.to_json_dict(), _setting(args, cfg, "out", None))
        return 0
    initial = _load_initial(cfg, args, spec.coeffs.horizon / steps)
    if solver == "tree":
        est = value_tree(spec.coeffs, initial, spec.controls, steps)
        _emit(est.to_json_dict(), _setting(args, cfg, "out", None))
    elif solver == "regression":
        paths = int(_setting(args, cfg, "paths", 4096))
        res = value_regression(spec.coeffs, initial, spec.controls,
                               RegressionValueConfig(steps, paths, seed))
        body = res.estimate.to_json_dict()
        body["raw_backward_value"] = res.raw_backward_value
        _emit(body, _setting(args, cfg, "out", None))
    else:
        raise ConfigError(f"unknown solver {solver!r}")
    return 0


def _cmd_dpp_check(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    if isinstance(spec, LiftedRun):
        raise ConfigError("lifted configs support the value subcommand only")
    solver = _setting(args, cfg, "solver", "tree")
    steps = int(_setting(args, cfg, "steps", 4))
    seed = _seed(args, cfg)
    delta = float(_setting(args, cfg, "delta", spec.coeffs.horizon / steps))
    tol = _setting(args, cfg, "tol", None)
    initial = _load_initial(cfg, args, spec.coeffs.horizon / steps)
    if solver == "tree":
        rep = dpp_residual(spec.coeffs, initial, spec.controls, delta, solver="tree",
                           n_steps=steps, tol=float(tol) if tol is not None else None)
    else:
        paths = int(_setting(args, cfg, "paths", 8192))
        rep = dpp_residual(spec.coeffs, initial, spec.controls, delta, solver="regression",
                           reg_cfg=RegressionValueConfig(steps, paths, seed),
                           tol=float(tol) if tol is not None else None)
    _emit(rep.to_json_dict(), _setting(args, cfg, "out", None))
    return 0 if rep.passed else 2


def _cmd_visc_check(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    if isinstance(spec, LiftedRun):
        raise ConfigError("lifted configs support the value subcommand only")
    if spec.analytic is None:
        raise ConfigError("visc-check needs a problem with a closed-form value")
    side = _setting(args, cfg, "side", "both")
    sides = ("sub", "super") if side == "both" else (side,)
    mu_raw = _setting(args, cfg, "mu", "2,4,8")
    mu_list = ([float(x) for x in mu_raw.split(",")] if isinstance(mu_raw, str)
               else [float(x) for x in mu_raw])
    alpha = float(_setting(args, cfg, "alpha", 0.25))
    m0 = float(_setting(args, cfg, "m0", 1.0))
    samples = int(_setting(args, cfg, "samples", 64))
    weight = float(_setting(args, cfg, "weight", 1e-3))
    seed = _seed(args, cfg)
    step = spec.coeffs.horizon / 256
    W = spec.analytic_handle()
    ball = HolderBallSpec(alpha, mu_list[0], m0, 0.0)
    anchor = _interior_anchor(ball, step, spec.coeffs.horizon, seed)
    reports = []
    ok = True
    for s in sides:
        reps = mu_limit_sweep(
            W, lambda a: penalty_test_functional(W, a, s, weight), s, ball,
            spec.coeffs, spec.controls, mu_list, samples, seed, step=step,
            anchor=anchor)
        for rep in reps:
            reports.append(rep.to_json_dict())
            if rep.passed is not True:
                ok = False
    _emit({"reports": reports}, _setting(args, cfg, "out", None))
    return 0 if ok else 2


def _interior_anchor(ball: HolderBallSpec, step: float, horizon: float, seed: int) -> DiscretePath:
    """A sampled ball path strictly inside the ball and away from the horizon."""
    for cand in sample_ball_paths(ball, 16, 1, step, horizon, seed, margin=0.5):
        t_frac = (cand.node_count - 1) * step / horizon
        if 0.05 <= t_frac <= 0.6 and float(np.linalg.norm(cand.endpoint)) < 0.5 * ball.m0 \
                and cand.node_count >= 3:
            return cand
    return zero_path(1, step, max(2, int(0.25 * horizon / step) + 1))


def _cmd_deriv(args, cfg) -> int:
    spec = _resolve_problem(cfg, args)
    if isinstance(spec, LiftedRun):
        raise ConfigError("lifted configs support the value subcommand only")
    if spec.analytic is None:
        raise ConfigError("deriv needs a problem with a closed-form value")
    steps = int(_setting(args, cfg, "steps", 64))
    step = spec.coeffs.horizon / steps
    path_file = _setting(args, cfg, "path", None)
    if path_file is None:
        n = steps // 2 + 1
        vals = 0.3 * np.linspace(0.0, 0.5 * spec.coeffs.horizon, n)
        p = DiscretePath(vals, step, continuous_origin=True)
    else:
        with open(path_file) as fh:
            p = DiscretePath.from_json_dict(json.load(fh))
    W = spec.analytic_handle()
    cfg_fd = FDConfig()
    body = {
        "value": float(W.eval(p)),
        "dt": horizontal_derivative(W, p, cfg_fd, horizon=spec.coeffs.horizon),
        "dx": vertical_derivative(W, p, cfg_fd).tolist(),
        "dxx": second_vertical(W, p, cfg_fd).tolist(),
    }
    _emit(body, _setting(args, cfg, "out", None))
    return 0


def _cmd_bench(args, cfg) -> int:
    from .acceptance import run_all, to_csv

    fast = bool(getattr(args, "fast", False))
    results = run_all(fast=fast, progress=sys.stderr)
    out = _setting(args, cfg, "out", None)
    csv_text = to_csv(results)
    if out is None or out == "-":
        sys.stdout.write(csv_text)
    else:
        with open(out, "w") as fh:
            fh.write(csv_text)
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathhjb",
        description="Path-dependent stochastic optimal control toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", help="builtin id (P1..P4 or full name)")
        p.add_argument("--config", help="JSON config file (inline problems allowed)")
        p.add_argument("--steps", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file ('-' for stdout)")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("simulate", help="forward trajectories to a columnar file")
    common(p)
    p.add_argument("--noise", choices=["gaussian", "rademacher"])
    p.add_argument("--control-index", dest="control_index", type=int)
    p.add_argument("--path", help="JSON initial path file")

    p = sub.add_parser("bsde", help="backward-equation value at the initial time")
    common(p)
    p.add_argument("--control-index", dest="control_index", type=int)
    p.add_argument("--path", help="JSON initial path file")

    p = sub.add_parser("value", help="optimal value by tree or regression")
    common(p)
    p.add_argument("--solver", choices=["tree", "regression"])
    p.add_argument("--path", help="JSON initial path file")

    p = sub.add_parser("dpp-check", help="dynamic programming residual")
    common(p)
    p.add_argument("--solver", choices=["tree", "regression"])
    p.add_argument("--delta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--path", help="JSON initial path file")

    p = sub.add_parser("visc-check", help="viscosity sub/supersolution tests")
    common(p)
    p.add_argument("--side", choices=["sub", "super", "both"])
    p.add_argument("--mu", help="comma-separated increasing ball constants")
    p.add_argument("--alpha", type=float)
    p.add_argument("--m0", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--weight", type=float)

    p = sub.add_parser("deriv", help="functional derivatives at a path")
    common(p)
    p.add_argument("--path", help="JSON path file")

    p = sub.add_parser("bench", help="acceptance suite table to CSV")
    common(p)
    p.add_argument("--fast", action="store_true", help="smaller sample sizes")
    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "bsde": _cmd_bsde,
    "value": _cmd_value,
    "dpp-check": _cmd_dpp_check,
    "visc-check": _cmd_visc_check,
    "deriv": _cmd_deriv,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = _load_config(getattr(args, "config", None))
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
