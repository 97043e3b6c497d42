#!/usr/bin/env python3
"""Run the full acceptance bench and write the CSV table.

Usage: python scripts/run_bench.py [--fast] [--out bench.csv]
"""

import argparse
import sys

from pathhjb.acceptance import run_all, to_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fast", action="store_true", help="smaller sample sizes")
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()
    results = run_all(fast=args.fast, progress=sys.stderr)
    with open(args.out, "w") as fh:
        fh.write(to_csv(results))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed; table written to {args.out}")
    return 0 if n_pass == len(results) else 2


if __name__ == "__main__":
    sys.exit(main())
