"""Offline and online stages of a benchmark, metric tables and report files.

Output layout under the run directory::

    {case}/offline/snapshots/snap_*.bin
    {case}/offline/{model}.rom          solution.rom, correction_w{w}.rom
    {case}/offline/offline.json         ranks and construction times
    {case}/{method}/report.txt          one record per test parameter
    {case}/{method}/history_{i}.txt     change history of test parameter i
    {case}/metrics.tsv                  one row per method
    {case}/summary.json                 machine-readable metrics
"""

import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..assembly import assemble
from ..dsa import build_dsa
from ..mesh import build_dg_space
from ..rom import (ReducedModel, RomsadCorrection, RomsaCorrection, SnapshotStore, build_reduced_model,
                   collect_snapshots, romig, romsad_threshold)
from ..solvers import (DsaCorrection, NoCorrection, SolveConfig, SolveReport, gmres_solve, sisa_solve,
                       write_history)
from .cases import BenchmarkCase

__all__ = [
    "MethodSpec",
    "parse_method",
    "OfflineArtifacts",
    "run_offline",
    "load_offline",
    "MetricsRow",
    "MetricsTable",
    "run_online",
    "emit_reports",
    "read_metrics",
]

log = logging.getLogger(__name__)

_METHOD_RE = re.compile(r"^(SI|DSA|ROMIG|PGMRES|PGMRES-ROMIG|ROMSA-(\d+)|ROMSAD-(\d+),(\d+))$")


@dataclass(frozen=True)
class MethodSpec:
    """Parsed online method label."""

    label: str
    kind: str  # SI, DSA, ROMIG, ROMSA, ROMSAD, PGMRES, PGMRES-ROMIG
    window: int | None = None
    theta: int | None = None

    @property
    def needs_solution_model(self) -> bool:
        return self.kind in ("ROMIG", "PGMRES-ROMIG")

    @property
    def needs_correction_model(self) -> bool:
        return self.kind in ("ROMSA", "ROMSAD")


def parse_method(label: str) -> MethodSpec:
    """``SI``, ``DSA``, ``ROMIG``, ``ROMSA-w``, ``ROMSAD-w,theta``, ``PGMRES`` or ``PGMRES-ROMIG``.

    The ``SI-`` prefix is accepted and dropped.
    """
    text = label.strip().upper().replace(" ", "")
    if text.startswith("SI-"):
        text = text[3:]
    m = _METHOD_RE.match(text)
    if m is None:
        raise ValueError(f"unknown method label {label!r}")
    if m.group(2):
        return MethodSpec(text, "ROMSA", int(m.group(2)))
    if m.group(3):
        return MethodSpec(text, "ROMSAD", int(m.group(3)), int(m.group(4)))
    return MethodSpec(text, text)


def _model_name(kind: str, window: int | None = None) -> str:
    return "solution" if kind == "solution" else f"correction_w{window}"


def _windows(methods) -> list:
    return sorted({s.window for s in map(parse_method, methods) if s.needs_correction_model})


# --------------------------------------------------------------------------
# offline


@dataclass
class OfflineArtifacts:
    """Paths and cost record of one offline stage."""

    case_id: str
    directory: Path
    eps_pod: float
    record: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def model_path(self, kind: str, window: int | None = None) -> Path:
        return self.directory / f"{_model_name(kind, window)}.rom"

    def model(self, kind: str, window: int | None = None) -> ReducedModel:
        key = _model_name(kind, window)
        if key not in self._cache:
            path = self.model_path(kind, window)
            if not path.exists():
                raise FileNotFoundError(f"offline artifact missing: {path}")
            self._cache[key] = ReducedModel.load(path)
        return self._cache[key]


def _discretize(case: BenchmarkCase):
    mesh = case.mesh()
    return mesh, build_dg_space(mesh), case.quadrature()


def run_offline(case: BenchmarkCase, out_dir, eps_pod: float | None = None, methods=None,
                reuse_snapshots: bool = False) -> OfflineArtifacts:
    """Training solves, POD bases and reduced operators for ``case``.

    One snapshot collection with the largest window serves every correction
    model; smaller windows read a prefix of the stored iterates.
    """
    eps_pod = case.eps_pod if eps_pod is None else eps_pod
    methods = case.methods if methods is None else methods
    windows = _windows(methods) or [case.window]
    directory = Path(out_dir) / case.case_id / "offline"
    directory.mkdir(parents=True, exist_ok=True)
    mesh, space, quad = _discretize(case)
    snap_dir = directory / "snapshots"
    w_max = max(windows)

    t0 = time.perf_counter()
    store = None
    if reuse_snapshots and any(snap_dir.glob("snap_*.bin")):
        probe = assemble(case.problem, mesh, space, quad, case.train_mus[0], fold_z=case.fold_z)
        store = SnapshotStore.open(snap_dir, w_max, case.eps_sisa, probe.classes.multiplicity)
        if min(store.window_sizes()) < min(w_max, min(store.n_conv)) or store.n_dof != probe.n_dof:
            store = None
    if store is None:
        store = collect_snapshots(case.problem, mesh, space, quad, case.train_mus, w_max, case.eps_sisa,
                                  snap_dir, fold_z=case.fold_z)
    t_snap = time.perf_counter() - t0

    system = assemble(case.problem, mesh, space, quad, case.train_mus[0], fold_z=case.fold_z)
    record = {"case": case.case_id, "eps_pod": eps_pod, "n_train": len(store.mus),
              "n_train_requested": int(len(case.train_mus)), "snapshot_seconds": t_snap, "models": {}}
    todo = [("solution", None)] + [("correction", w) for w in windows]
    for kind, w in todo:
        src = store.source(kind, w)
        model = build_reduced_model(src, system, eps_pod, kind=kind)
        model.save(directory / f"{_model_name(kind, w)}.rom")
        record["models"][_model_name(kind, w)] = {
            "rank": model.r, "n_columns": int(src.n_cols),
            "basis_seconds": model.timings["basis"], "operator_seconds": model.timings["operators"],
        }
    with open(directory / "offline.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return OfflineArtifacts(case.case_id, directory, eps_pod, record)


def load_offline(case: BenchmarkCase, out_dir) -> OfflineArtifacts:
    """Reopen the artifacts written by :func:`run_offline`."""
    directory = Path(out_dir) / case.case_id / "offline"
    path = directory / "offline.json"
    if not path.exists():
        raise FileNotFoundError(f"offline artifact missing: {path}")
    with open(path) as fh:
        record = json.load(fh)
    return OfflineArtifacts(case.case_id, directory, record["eps_pod"], record)


# --------------------------------------------------------------------------
# online


@dataclass
class MetricsRow:
    method: str
    n_sweep: float
    t_rel: float  # percent of the SI-DSA zero-guess mean wall time
    residual: float  # mean ||(I - L) rho - b_bar||_inf
    n_converged: int
    n_runs: int
    seconds: float

    FIELDS = ("method", "n_sweep", "t_rel", "residual", "n_converged", "n_runs", "seconds")


@dataclass
class MetricsTable:
    """Per-method means over the test set of one case."""

    case_id: str
    rows: list = field(default_factory=list)
    offline: dict = field(default_factory=dict)

    def row(self, method: str) -> MetricsRow:
        key = parse_method(method).label
        for r in self.rows:
            if r.method == key:
                return r
        raise KeyError(method)

    def n_sweep(self, method: str) -> float:
        return self.row(method).n_sweep

    def to_text(self, with_time: bool = True, sep: str = "\t") -> str:
        """Delimited table with header; ``with_time=False`` drops wall-time columns."""
        cols = [c for c in MetricsRow.FIELDS if with_time or c not in ("t_rel", "seconds")]
        lines = [sep.join(cols)]
        for r in self.rows:
            vals = []
            for c in cols:
                v = getattr(r, c)
                vals.append(f"{v:.6g}" if isinstance(v, float) else str(v))
            lines.append(sep.join(vals))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"case": self.case_id, "rows": [asdict(r) for r in self.rows], "offline": self.offline}

    @classmethod
    def from_dict(cls, d) -> "MetricsTable":
        return cls(d["case"], [MetricsRow(**r) for r in d["rows"]], d.get("offline", {}))


def _summarize(method: str, reports) -> MetricsRow:
    return MetricsRow(method, float(np.mean([r.n_sweep for r in reports])), float("nan"),
                      float(np.mean([r.final_residual for r in reports])),
                      int(sum(r.converged for r in reports)), len(reports),
                      float(np.mean([r.wall_seconds for r in reports])))


def _solve_one(spec: MethodSpec, case, system, dsa, artifacts, config, gconfig):
    if spec.kind in ("SI", "DSA", "ROMIG"):
        cfg = config
        t0 = time.perf_counter()
        if spec.kind == "ROMIG":
            cfg = SolveConfig(**{**asdict(config), "initial_guess": romig(artifacts.model("solution"), system)})
        strategy = NoCorrection() if spec.kind == "SI" else DsaCorrection(dsa)
        _, rep = sisa_solve(system, strategy, cfg, label=spec.label)
    elif spec.kind == "ROMSA":
        t0 = time.perf_counter()
        strategy = RomsaCorrection(artifacts.model("correction", spec.window), spec.window)
        _, rep = sisa_solve(system, strategy, config, label=spec.label)
    elif spec.kind == "ROMSAD":
        t0 = time.perf_counter()
        model = artifacts.model("correction", spec.window)
        eps_switch = romsad_threshold(case.eps_sisa, artifacts.eps_pod, case.eta)
        strategy = RomsadCorrection(model, spec.theta, eps_switch, dsa, spec.window)
        _, rep = sisa_solve(system, strategy, config, label=spec.label)
    else:
        t0 = time.perf_counter()
        guess = romig(artifacts.model("solution"), system) if spec.kind == "PGMRES-ROMIG" else None
        _, rep = gmres_solve(system, dsa, gconfig, initial_guess=guess, label=spec.label)
    rep.wall_seconds = time.perf_counter() - t0
    return rep


def run_online(case: BenchmarkCase, artifacts: OfflineArtifacts | None, methods=None, test_mus=None,
               max_iter: int = 2000):
    """Solve every test parameter with every method.

    Per parameter the transport system and the factored diffusion operator are
    built once and shared; wall times cover the solves only (including any
    reduced-model factorization and the ROMIG solve).

    Returns
    -------
    table : MetricsTable
    reports : dict
        Method label to list of :class:`SolveReport`, in test-set order.
    """
    specs = [parse_method(m) for m in (case.methods if methods is None else methods)]
    if any(s.needs_solution_model or s.needs_correction_model for s in specs) and artifacts is None:
        raise FileNotFoundError(f"offline artifacts of {case.case_id!r} are required for ROM methods")
    for s in specs:  # fail early, naming the missing file
        if s.needs_solution_model:
            artifacts.model("solution")
        if s.needs_correction_model:
            artifacts.model("correction", s.window)
    if not any(s.kind == "DSA" for s in specs):
        specs.insert(0, parse_method("DSA"))  # normalization reference
    mus = case.test_mus() if test_mus is None else np.atleast_2d(test_mus)
    mesh, space, quad = _discretize(case)
    config = SolveConfig(eps_sisa=case.eps_sisa, max_iter=max_iter)
    gconfig = SolveConfig(eps_sisa=case.eps_sisa, max_iter=max_iter, gmres_rel_tol=case.gmres_rel_tol)
    reports = {s.label: [] for s in specs}
    for i, mu in enumerate(mus):
        system = assemble(case.problem, mesh, space, quad, mu, fold_z=case.fold_z)
        dsa = build_dsa(system)
        if i == 0:
            system.rhs_bar(count=False)  # compile the sweep kernel outside the timers
        for s in specs:
            rep = _solve_one(s, case, system, dsa, artifacts, config, gconfig)
            reports[s.label].append(rep)
            log.info("%s mu[%d]=%s %s: %d sweeps", case.case_id, i, np.round(mu, 4), s.label, rep.n_sweep)
    rows = [_summarize(s.label, reports[s.label]) for s in specs]
    ref = next(r for r in rows if r.method == "DSA").seconds
    for r in rows:
        r.t_rel = 100.0 * r.seconds / ref if ref > 0 else float("nan")
    offline = {}
    if artifacts is not None and artifacts.record:
        offline = _relative_offline(artifacts.record, ref)
    return MetricsTable(case.case_id, rows, offline), reports


def _relative_offline(record: dict, ref_seconds: float) -> dict:
    """Basis and operator construction times in percent of one SI-DSA solve."""
    out = {}
    for name, m in record.get("models", {}).items():
        out[name] = {"rank": m["rank"],
                     "basis_percent": 100.0 * m["basis_seconds"] / ref_seconds,
                     "operator_percent": 100.0 * m["operator_seconds"] / ref_seconds}
    return out


# --------------------------------------------------------------------------
# reports


def emit_reports(table: MetricsTable, reports: dict, out_dir) -> Path:
    """Write per-method reports and histories, the metrics table and the summary."""
    base = Path(out_dir) / table.case_id
    base.mkdir(parents=True, exist_ok=True)
    for method, reps in reports.items():
        d = base / method
        d.mkdir(exist_ok=True)
        with open(d / "report.txt", "w") as fh:
            fh.write(SolveReport.record_header() + "\n")
            for rep in reps:
                fh.write(rep.to_record() + "\n")
        for i, rep in enumerate(reps):
            write_history(rep, d / f"history_{i}.txt")
    (base / "metrics.tsv").write_text(table.to_text())
    with open(base / "summary.json", "w") as fh:
        json.dump(table.to_dict(), fh, indent=2, sort_keys=True)
    return base


def read_metrics(path) -> MetricsTable:
    """Parse ``summary.json`` (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    with open(path) as fh:
        return MetricsTable.from_dict(json.load(fh))
