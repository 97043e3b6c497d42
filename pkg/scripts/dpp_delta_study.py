#!/usr/bin/env python3
"""Dynamic-programming residual across restart times.

The exact tree satisfies the recursion to rounding at every grid multiple;
the regression route composes the fitted value surrogate through the
backward semigroup and its residual reflects Monte Carlo and fit error.
"""

import argparse

from pathhjb import RegressionValueConfig, dpp_residual, zero_path
from pathhjb.problems import make_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="P2_drift_control")
    ap.add_argument("--steps", type=int, default=16)
    ap.add_argument("--paths", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = make_problem(args.problem)
    h = 1.0 / args.steps
    print(f"{'delta':>8} {'tree residual':>15} {'regression residual':>21}")
    for kd in (1, 2, 4, args.steps // 2):
        tree = dpp_residual(spec.coeffs, zero_path(1, 0.25, 1), spec.controls,
                            delta=0.25 * min(kd, 4) if kd <= 4 else 1.0,
                            solver="tree", n_steps=4)
        reg = dpp_residual(spec.coeffs, zero_path(1, h, 1), spec.controls,
                           delta=kd * h, solver="regression",
                           reg_cfg=RegressionValueConfig(args.steps, args.paths,
                                                         args.seed))
        print(f"{kd * h:>8.4f} {tree.residual:>15.2e} {reg.residual:>21.4f}")


if __name__ == "__main__":
    main()
