"""Command line entry point: ``romsa {offline,solve,bench,compare}``.

Settings come from flags or from an INI file (``--config``) whose ``[run]``
section uses the flag names with dashes replaced by underscores::

    [run]
    version = 1
    case = pin_cell
    scale = reduced
    eps_pod = 1e-9
    methods = DSA, ROMIG, ROMSAD-3,5
    out = runs

Flags given on the command line override the file.
"""

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

CONFIG_VERSION = 1
_KEYS = ("case", "scale", "eps_pod", "methods", "out", "n_test", "seed", "mu")


def _split_methods(text: str) -> list:
    # "ROMSAD-3,5" contains a comma, so split only before a letter
    parts, cur = [], ""
    for tok in text.split(","):
        tok = tok.strip()
        if cur and tok[:1].isdigit():
            cur += "," + tok
        else:
            if cur:
                parts.append(cur)
            cur = tok
    if cur:
        parts.append(cur)
    return parts


def load_config(path) -> dict:
    """Read the ``[run]`` section of an INI file into a dict of strings."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    if "run" not in cp:
        raise ValueError(f"{path}: missing [run] section")
    sec = dict(cp["run"])
    version = int(sec.pop("version", "0"))
    if version != CONFIG_VERSION:
        raise ValueError(f"{path}: config version {version} unsupported (expected {CONFIG_VERSION})")
    unknown = set(sec) - set(_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return sec


def _merge(args) -> argparse.Namespace:
    if getattr(args, "config", None):
        for k, v in load_config(args.config).items():
            if getattr(args, k, None) is None:
                setattr(args, k, v)
    return args


def _case(args):
    from .bench.cases import define_case

    scale = args.scale or "full"
    try:
        scale = float(scale)
    except ValueError:
        pass
    case = define_case(args.case, scale)
    if args.n_test is not None:
        case.n_test = int(args.n_test)
    if args.seed is not None:
        case.seed = int(args.seed)
    if args.methods:
        case.methods = tuple(_split_methods(args.methods) if isinstance(args.methods, str) else args.methods)
    return case


def _eps(args, case):
    return case.eps_pod if args.eps_pod is None else float(args.eps_pod)


def cmd_offline(args) -> int:
    from .bench.runner import run_offline

    case = _case(args)
    art = run_offline(case, args.out, _eps(args, case))
    print(json.dumps(art.record, indent=2, sort_keys=True))
    return 0


def cmd_solve(args) -> int:
    from .assembly import assemble
    from .bench.runner import _discretize, _solve_one, load_offline, parse_method
    from .dsa import build_dsa
    from .solvers import SolveConfig, SolveReport

    case = _case(args)
    if args.mu is None:
        raise SystemExit("solve needs --mu")
    mu = np.array([float(x) for x in str(args.mu).split(",")])
    case.problem.check_mu(mu)
    specs = [parse_method(m) for m in case.methods]
    needs_rom = any(s.needs_solution_model or s.needs_correction_model for s in specs)
    art = load_offline(case, args.out) if needs_rom else None
    mesh, space, quad = _discretize(case)
    system = assemble(case.problem, mesh, space, quad, mu, fold_z=case.fold_z)
    dsa = build_dsa(system)
    cfg = SolveConfig(eps_sisa=case.eps_sisa, max_iter=2000)
    gcfg = SolveConfig(eps_sisa=case.eps_sisa, max_iter=2000, gmres_rel_tol=case.gmres_rel_tol)
    print(SolveReport.record_header())
    for s in specs:
        print(_solve_one(s, case, system, dsa, art, cfg, gcfg).to_record())
    return 0


def cmd_bench(args) -> int:
    from .bench.runner import emit_reports, load_offline, run_offline, run_online

    case = _case(args)
    eps = _eps(args, case)
    try:
        art = load_offline(case, args.out)
        if art.eps_pod != eps or args.rebuild:
            raise FileNotFoundError
    except FileNotFoundError:
        art = run_offline(case, args.out, eps)
    table, reports = run_online(case, art)
    base = emit_reports(table, reports, args.out)
    sys.stdout.write(table.to_text())
    print(f"reports written to {base}")
    return 0


def cmd_compare(args) -> int:
    """Print n_sweep of two summaries side by side with their ratio."""
    from .bench.runner import read_metrics

    a, b = read_metrics(args.first), read_metrics(args.second)
    print("method\tn_sweep_a\tn_sweep_b\tratio")
    for row in a.rows:
        try:
            other = b.row(row.method).n_sweep
        except KeyError:
            continue
        print(f"{row.method}\t{row.n_sweep:.4g}\t{other:.4g}\t{row.n_sweep / other:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="romsa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with a [run] section")
        sp.add_argument("--case", help="benchmark id")
        sp.add_argument("--scale", help="full, reduced, or a factor in (0, 1]")
        sp.add_argument("--eps-pod", dest="eps_pod", help="POD truncation tolerance")
        sp.add_argument("--methods", help="comma separated method labels")
        sp.add_argument("--out", help="run directory (default: runs)")
        sp.add_argument("--n-test", dest="n_test", help="number of test parameters")
        sp.add_argument("--seed", help="test-set seed")

    s = sub.add_parser("offline", help="training solves and reduced models")
    common(s)
    s.set_defaults(func=cmd_offline)
    s = sub.add_parser("solve", help="solve one parameter with the listed methods")
    common(s)
    s.add_argument("--mu", help="comma separated parameter values")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("bench", help="offline (if needed), online and reports")
    common(s)
    s.add_argument("--rebuild", action="store_true", help="redo the offline stage")
    s.set_defaults(func=cmd_bench)
    s = sub.add_parser("compare", help="compare two summary files")
    s.add_argument("first")
    s.add_argument("second")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb != "compare":
        args = _merge(args)
        if not args.case:
            raise SystemExit("--case is required (flag or config)")
        args.out = args.out or "runs"
        for k in ("mu",):
            if not hasattr(args, k):
                setattr(args, k, None)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
