#!/usr/bin/env python3
"""Refinement study of the pathwise change-of-variables residual.

For f(path) = endpoint^2 on Brownian drivers the residual per trajectory is
the compensated quadratic variation, so its RMS should shrink like sqrt(h).
Prints one row per step size and the fitted log-log slope.
"""

import argparse

import numpy as np

from pathhjb import ConstantControl, FunctionalHandle, ito_residual, simulate_forward, zero_path
from pathhjb.problems import make_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=505)
    ap.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    args = ap.parse_args()

    spec = make_problem("P2_drift_control")
    still = ConstantControl(spec.controls, 1)
    f = FunctionalHandle(
        eval=lambda p: float(p.endpoint[0]) ** 2,
        batch_eval=lambda pb: pb.endpoint[:, 0] ** 2,
        batch_dt=lambda pb: np.zeros(pb.n_paths),
        batch_dx=lambda pb: 2.0 * pb.endpoint,
        batch_dxx=lambda pb: np.full((pb.n_paths, 1, 1), 2.0),
        check_derivatives=False)

    print(f"{'n_steps':>8} {'h':>10} {'mean':>12} {'3*SE':>12} {'rms':>12}")
    hs, rms = [], []
    for n in args.steps:
        batch = simulate_forward(spec.coeffs, zero_path(1, 1.0 / n, 1), still,
                                 args.paths, args.seed)
        st = ito_residual(f, spec.coeffs, batch)
        hs.append(1.0 / n)
        rms.append(st.rms)
        print(f"{n:>8} {1.0 / n:>10.5f} {st.mean:>+12.5f} {3 * st.std_error:>12.5f} "
              f"{st.rms:>12.5f}")
    slope = np.polyfit(np.log(hs), np.log(rms), 1)[0]
    print(f"\nlog-log RMS slope: {slope:.3f} (theory: 0.5)")


if __name__ == "__main__":
    main()
