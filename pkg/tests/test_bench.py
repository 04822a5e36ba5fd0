import json

import numpy as np
import pytest

from romsa.bench.cases import CASE_IDS, LATTICE_MAP, define_case
from romsa.bench.runner import (MetricsRow, MetricsTable, OfflineArtifacts, emit_reports, load_offline,
                                parse_method, read_metrics, run_offline, run_online)
from romsa.cli import _split_methods, load_config, main
from romsa.solvers import SolveReport

SMALL_METHODS = ("DSA", "ROMIG", "ROMSA-1", "ROMSAD-3,3", "PGMRES", "PGMRES-ROMIG")


# ---------------------------------------------------------------- cases


def test_cross_regime_full_setup():
    case = define_case("cross_regime", "full")
    mesh = case.mesh()
    assert mesh.n_cells == 400 and (mesh.x_edges[0], mesh.x_edges[-1]) == (0.0, 10.0)
    assert case.quadrature().n == 16 and case.eps_sisa == 1e-11
    assert len(case.train_mus) == 41


def test_pin_cell_full_setup():
    case = define_case("pin_cell", "full")
    mesh = case.mesh()
    assert (mesh.nx, mesh.ny) == (80, 80)
    assert (mesh.x_edges[0], mesh.x_edges[-1], mesh.y_edges[0], mesh.y_edges[-1]) == (-1, 1, -1, 1)
    assert case.quad_spec == ("CL", 30, 6) and case.eps_sisa == 1e-11 and case.eps_pod == 1e-9
    assert len(case.train_mus) == 25


def test_homogeneous_half_scale_keeps_physics():
    full, half = define_case("homogeneous", "full"), define_case("homogeneous", "reduced")
    assert (half.mesh().nx, half.mesh().ny) == (40, 40)
    assert half.quad_spec == ("CL", 16, 4)
    x = np.linspace(0, 1, 7)
    for mu in ([0.9], [1.05]):
        np.testing.assert_array_equal(full.problem.sigma_s(mu, x, x), half.problem.sigma_s(mu, x, x))
    np.testing.assert_array_equal(full.train_mus, half.train_mus)


@pytest.mark.parametrize("case_id", CASE_IDS)
def test_every_case_is_consistent(case_id):
    case = define_case(case_id, 0.1)
    lo = np.array([r[0] for r in case.problem.param_ranges])
    hi = np.array([r[1] for r in case.problem.param_ranges])
    assert np.all(case.train_mus >= lo - 1e-12) and np.all(case.train_mus <= hi + 1e-12)
    test = case.test_mus()
    assert test.shape == (case.n_test, lo.size)
    assert np.all(test >= lo) and np.all(test <= hi)
    # disjoint from the training set and reproducible
    assert min(np.abs(case.train_mus - m).max(axis=1).min() for m in test) > 0
    np.testing.assert_array_equal(test, define_case(case_id, 0.1).test_mus())
    for m in case.methods:
        parse_method(m)
    assert case.quadrature().n > 0 and case.mesh().n_cells > 0


def test_lattice_map_layout():
    assert len(LATTICE_MAP) == 5 and all(len(r) == 5 for r in LATTICE_MAP)
    assert LATTICE_MAP[2][2] == "C"
    assert sum(r.count("A") for r in LATTICE_MAP) == 12


def test_define_case_rejects_bad_input():
    with pytest.raises(ValueError):
        define_case("nope")
    with pytest.raises(ValueError):
        define_case("homogeneous", "quarter")
    with pytest.raises(ValueError):
        define_case("homogeneous", 1.5)


# ---------------------------------------------------------------- method labels


@pytest.mark.parametrize("label,kind,window,theta", [
    ("DSA", "DSA", None, None), ("SI-DSA", "DSA", None, None), ("si", "SI", None, None),
    ("ROMIG", "ROMIG", None, None), ("SI-ROMSA-3", "ROMSA", 3, None), ("ROMSAD-3,5", "ROMSAD", 3, 5),
    ("PGMRES", "PGMRES", None, None), ("PGMRES-ROMIG", "PGMRES-ROMIG", None, None),
])
def test_parse_method(label, kind, window, theta):
    spec = parse_method(label)
    assert (spec.kind, spec.window, spec.theta) == (kind, window, theta)


@pytest.mark.parametrize("label", ["ROMSAD-3", "ROMSA", "GMRES-DSA", "ROMSA-x"])
def test_parse_method_rejects_unknown(label):
    with pytest.raises(ValueError):
        parse_method(label)


def test_split_methods_keeps_romsad_pairs():
    assert _split_methods("DSA, ROMSAD-3,5,PGMRES,ROMSAD-1,3") == ["DSA", "ROMSAD-3,5", "PGMRES", "ROMSAD-1,3"]


# ---------------------------------------------------------------- report formats


def _fixed_table_and_reports():
    reps = {
        "DSA": [SolveReport(True, 5, [1e-2, 1e-4, 1e-7, 1e-12], 3.0e-13, 0.5, "DSA", 4)],
        "ROMSAD-3,5": [SolveReport(True, 3, [1e-9, 1e-13], 2.5e-14, 0.125, "ROMSAD-3,5", 2)],
    }
    rows = [MetricsRow("DSA", 5.0, 100.0, 3e-13, 1, 1, 0.5), MetricsRow("ROMSAD-3,5", 3.0, 25.0, 2.5e-14, 1, 1, 0.125)]
    return MetricsTable("demo", rows, {"solution": {"rank": 4}}), reps


def test_metrics_table_golden(tmp_path):
    table, reps = _fixed_table_and_reports()
    base = emit_reports(table, reps, tmp_path)
    assert (base / "metrics.tsv").read_text() == (
        "method\tn_sweep\tt_rel\tresidual\tn_converged\tn_runs\tseconds\n"
        "DSA\t5\t100\t3e-13\t1\t1\t0.5\n"
        "ROMSAD-3,5\t3\t25\t2.5e-14\t1\t1\t0.125\n"
    )


def test_report_golden(tmp_path):
    table, reps = _fixed_table_and_reports()
    base = emit_reports(table, reps, tmp_path)
    assert (base / "ROMSAD-3,5" / "report.txt").read_text() == (
        "label\tconverged\tn_sweep\tn_iter\tresidual_inf\tseconds\n"
        "ROMSAD-3,5\t1\t3\t2\t2.500000e-14\t0.125000\n"
    )


def test_history_golden(tmp_path):
    table, reps = _fixed_table_and_reports()
    base = emit_reports(table, reps, tmp_path)
    assert (base / "ROMSAD-3,5" / "history_0.txt").read_text() == (
        "# ROMSAD-3,5\n"
        "1 1.00000000000000006e-09\n"
        "2 1.00000000000000003e-13\n"
    )


def test_summary_round_trip(tmp_path):
    table, reps = _fixed_table_and_reports()
    base = emit_reports(table, reps, tmp_path)
    back = read_metrics(base)
    assert back == table
    assert read_metrics(base / "summary.json").to_text() == table.to_text()
    json.loads((base / "summary.json").read_text())


def test_table_without_time_columns():
    table, _ = _fixed_table_and_reports()
    assert table.to_text(with_time=False).splitlines()[0] == "method\tn_sweep\tresidual\tn_converged\tn_runs"
    assert table.n_sweep("SI-ROMSAD-3,5") == 3.0
    with pytest.raises(KeyError):
        table.row("PGMRES")


# ---------------------------------------------------------------- orchestration


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """Cross-regime slab at 1/20 scale: 20 cells, two test parameters."""
    out = tmp_path_factory.mktemp("run")
    case = define_case("cross_regime", 0.05)
    case.n_test = 2
    case.methods = SMALL_METHODS
    art = run_offline(case, out)
    return case, art, out


def test_offline_writes_models_and_record(small_run):
    case, art, out = small_run
    d = out / "cross_regime" / "offline"
    assert {p.name for p in d.glob("*.rom")} == {"solution.rom", "correction_w1.rom", "correction_w3.rom"}
    rec = json.loads((d / "offline.json").read_text())
    assert rec["n_train"] == 41 and rec["eps_pod"] == case.eps_pod
    assert rec["models"]["correction_w1"]["n_columns"] == 41
    assert load_offline(case, out).record == rec


def test_online_rows_residuals_and_orderings(small_run):
    case, art, out = small_run
    table, reps = run_online(case, art)
    assert [r.method for r in table.rows] == list(SMALL_METHODS)
    assert len(table.rows) == len(SMALL_METHODS) * 1  # methods x cases
    assert table.row("DSA").t_rel == 100.0
    for r in table.rows:
        assert r.n_converged == r.n_runs == 2
        assert r.residual <= 100 * case.eps_sisa
    assert table.n_sweep("ROMSAD-3,3") <= table.n_sweep("DSA")
    assert table.n_sweep("PGMRES-ROMIG") <= table.n_sweep("PGMRES")
    base = emit_reports(table, reps, out)
    assert (base / "ROMIG" / "history_1.txt").exists()


def test_online_is_reproducible_without_time_columns(small_run):
    case, art, out = small_run
    a, _ = run_online(case, load_offline(case, out))
    b, _ = run_online(case, load_offline(case, out))
    assert a.to_text(with_time=False) == b.to_text(with_time=False)


def test_missing_artifact_names_the_file(small_run, tmp_path):
    case, _, _ = small_run
    empty = OfflineArtifacts("cross_regime", tmp_path, 1e-11)
    with pytest.raises(FileNotFoundError, match="solution.rom"):
        run_online(case, empty, methods=["ROMIG"])
    with pytest.raises(FileNotFoundError, match="correction_w7.rom"):
        run_online(case, empty, methods=["DSA", "ROMSA-7"])
    with pytest.raises(FileNotFoundError):
        run_online(case, None, methods=["ROMIG"])
    with pytest.raises(FileNotFoundError, match="offline.json"):
        load_offline(case, tmp_path)


def test_online_without_models_adds_dsa_reference(small_run):
    case, _, _ = small_run
    table, reps = run_online(case, None, methods=["SI", "PGMRES"], test_mus=[[15.0]])
    assert [r.method for r in table.rows] == ["DSA", "SI", "PGMRES"]
    assert table.n_sweep("SI") > table.n_sweep("DSA")


# ---------------------------------------------------------------- CLI


def _write_config(path, **kv):
    body = "[run]\nversion = 1\n" + "".join(f"{k} = {v}\n" for k, v in kv.items())
    path.write_text(body)
    return path


def test_config_schema(tmp_path):
    cfg = load_config(_write_config(tmp_path / "ok.ini", case="pin_cell", methods="DSA, ROMSAD-3,5"))
    assert cfg == {"case": "pin_cell", "methods": "DSA, ROMSAD-3,5"}
    with pytest.raises(ValueError, match="unknown keys"):
        load_config(_write_config(tmp_path / "bad.ini", case="x", colour="red"))
    (tmp_path / "v2.ini").write_text("[run]\nversion = 2\n")
    with pytest.raises(ValueError, match="version"):
        load_config(tmp_path / "v2.ini")
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.ini")


def test_cli_bench_and_compare(tmp_path, capsys):
    cfg = _write_config(tmp_path / "run.ini", case="cross_regime", scale="0.05", methods="DSA,ROMIG,ROMSAD-1,3",
                        n_test="1", out=str(tmp_path / "runs"))
    assert main(["bench", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("method\tn_sweep") and "ROMSAD-1,3" in out
    summary = tmp_path / "runs" / "cross_regime" / "summary.json"
    assert summary.exists()
    assert main(["compare", str(summary), str(summary)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "method\tn_sweep_a\tn_sweep_b\tratio" and all(l.endswith("\t1") for l in lines[1:])
    # flags override the file; solve reuses the stored models
    assert main(["solve", "--config", str(cfg), "--methods", "ROMIG,SI-DSA", "--mu", "12.5"]) == 0
    rec = capsys.readouterr().out.splitlines()
    assert [r.split("\t")[0] for r in rec[1:]] == ["ROMIG", "DSA"]
