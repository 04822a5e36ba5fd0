#!/usr/bin/env python3
"""Print the change histories of several methods side by side.

Reads ``{run}/{case}/{method}/history_{i}.txt`` as written by the benchmark
runner and prints one column per method (log10 of the change), which is
convenient for piping into any plotting tool.

Example::

    python3 scripts/plot_history.py runs/pin_cell DSA ROMIG ROMSAD-3,5 --index 0
"""

import argparse
from pathlib import Path

import numpy as np


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("case_dir", type=Path)
    p.add_argument("methods", nargs="+")
    p.add_argument("--index", type=int, default=0, help="test parameter index")
    args = p.parse_args()
    cols = []
    for m in args.methods:
        data = np.loadtxt(args.case_dir / m / f"history_{args.index}.txt", ndmin=2)
        cols.append(np.log10(data[:, 1]))
    n = max(c.size for c in cols)
    print("k\t" + "\t".join(args.methods))
    for k in range(n):
        print(f"{k + 1}\t" + "\t".join(f"{c[k]:.3f}" if k < c.size else "" for c in cols))


if __name__ == "__main__":
    main()
