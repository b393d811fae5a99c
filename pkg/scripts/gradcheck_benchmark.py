#!/usr/bin/env python3
"""Time the full-model finite-difference gradient sweep and report the
worst relative error per parameter group."""

import argparse
import sys
import time

from mrgan360.cli import run_gradcheck_suite


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stages", type=int, default=3)
    parser.add_argument("--size", type=int, default=8)
    parser.add_argument("--tolerance", type=float, default=1e-4)
    args = parser.parse_args()

    start = time.time()
    results = run_gradcheck_suite(seed=args.seed, stages=args.stages,
                                  size=args.size)
    elapsed = time.time() - start
    worst = 0.0
    for group in sorted(results):
        err = results[group]
        print(f"{group:<28s} max rel-err {err:.3e}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} in {elapsed:.1f}s "
          f"({'OK' if worst <= args.tolerance else 'OVER TOLERANCE'})")
    return 0 if worst <= args.tolerance else 1


if __name__ == "__main__":
    sys.exit(main())
