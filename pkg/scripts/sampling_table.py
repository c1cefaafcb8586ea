"""Recompute the sampling probability table from the reference counts.

    python3 scripts/sampling_table.py            # gamma = 0 and the default 0.7
    python3 scripts/sampling_table.py --gamma 0.3
"""

import argparse

import numpy as np

from robustps.fixtures import sampling_table_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, action="append")
    args = ap.parse_args()
    np.set_printoptions(precision=4, suppress=True)
    for gamma in args.gamma or [0.0, 0.7]:
        chk = sampling_table_check(gamma=gamma)
        print(f"gamma={gamma}: {'match' if chk.passed else 'mismatch'} "
              f"(max |delta| {np.abs(chk.deltas).max():.4f}, tol {chk.tolerance})")
        print(chk.computed)
    print("literal")
    print(chk.expected)


if __name__ == "__main__":
    main()
