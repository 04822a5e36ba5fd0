#!/usr/bin/env python3
"""Run the offline and online stages of one or more benchmark cases.

Example::

    python3 scripts/run_benchmark.py homogeneous pin_cell --scale reduced --out runs
"""

import argparse
import logging
import time

from romsa.bench.cases import CASE_IDS, define_case
from romsa.bench.runner import emit_reports, run_offline, run_online


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("cases", nargs="+", choices=CASE_IDS)
    p.add_argument("--scale", default="full", help="full, reduced or a factor in (0, 1]")
    p.add_argument("--eps-pod", type=float, default=None)
    p.add_argument("--out", default="runs")
    p.add_argument("--reuse-snapshots", action="store_true", help="skip training solves if snapshots exist")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    scale = args.scale if args.scale in ("full", "reduced", "half") else float(args.scale)

    for cid in args.cases:
        case = define_case(cid, scale)
        t0 = time.perf_counter()
        art = run_offline(case, args.out, args.eps_pod, reuse_snapshots=args.reuse_snapshots)
        t1 = time.perf_counter()
        table, reports = run_online(case, art)
        t2 = time.perf_counter()
        base = emit_reports(table, reports, args.out)
        ranks = {k: v["rank"] for k, v in art.record["models"].items()}
        print(f"== {cid} (scale {scale}, eps_pod {art.eps_pod:g}) offline {t1 - t0:.0f}s, online {t2 - t1:.0f}s")
        print(f"ranks: {ranks}")
        print(table.to_text(), end="")
        print(f"reports: {base}\n")


if __name__ == "__main__":
    main()
