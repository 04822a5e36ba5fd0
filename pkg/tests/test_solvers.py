import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from romsa.assembly import assemble
from romsa.dsa import DsaSolveError, build_dsa, dsa_correct
from romsa.mesh import build_dg_space, uniform_slab
from romsa.problem import ProblemDefinition
from romsa.quadrature import gauss_legendre
from romsa.solvers import (CorrectionStrategy, DsaCorrection, ExactKineticCorrection, NoCorrection,
                           SolveConfig, SolveReport, gmres_solve, residual_inf, sisa_solve, write_history)


def dense_density(system):
    f = np.linalg.solve(system.dense_A(), system.dense_b()).reshape(system.quad.n, -1)
    return system.quad.weights @ f


def homogeneous_slab(sigma, length, n_cells, n_dir, source=1.0):
    prob = ProblemDefinition("slab", "slab1d", lambda mu, x: 0 * x, lambda mu, x: 0 * x + sigma,
                             lambda x: 0 * x + source, param_names=(), param_ranges=())
    mesh = uniform_slab(0.0, length, n_cells)
    return assemble(prob, mesh, build_dg_space(mesh), gauss_legendre(n_dir), [])


# ---------------------------------------------------------------- SISA


@pytest.mark.parametrize("geometry", ["slab", "square"])
def test_si_dsa_and_pgmres_match_dense_solve(geometry, tiny_slab, tiny_square):
    problem, mesh, space, quad = tiny_slab if geometry == "slab" else tiny_square
    system = assemble(problem, mesh, space, quad, [1.2, 1.7], fold_z=(geometry == "square"))
    ref = dense_density(system)
    rho, rep = sisa_solve(system, DsaCorrection(), SolveConfig(eps_sisa=1e-12))
    assert rep.converged and np.abs(rho - ref).max() < 1e-11
    rho, rep = gmres_solve(system, "dsa", SolveConfig(gmres_rel_tol=1e-13))
    assert rep.converged and np.abs(rho - ref).max() < 1e-11


def test_unaccelerated_si_converges_to_dense_solution(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 0.5])
    rho, rep = sisa_solve(system, NoCorrection(), SolveConfig(eps_sisa=1e-13, max_iter=5000))
    assert rep.converged
    assert np.abs(rho - dense_density(system)).max() < 1e-11


def test_exact_kinetic_correction_needs_at_most_two_corrections(tiny_slab, tiny_square):
    for problem, mesh, space, quad in (tiny_slab, tiny_square):
        system = assemble(problem, mesh, space, quad, [0.9, 1.9])
        strat = ExactKineticCorrection()
        calls = []
        orig = strat.correct
        strat.correct = lambda l, d: calls.append(l) or orig(l, d)
        rho, rep = sisa_solve(system, strat, SolveConfig(eps_sisa=1e-12))
        assert rep.converged and len(calls) <= 2
        assert np.abs(rho - dense_density(system)).max() < 1e-11


class _Recorder(CorrectionStrategy):
    label = "REC"

    def __init__(self):
        self.seen = []

    def correct(self, l, delta):
        self.seen.append((l, float(np.abs(delta).max())))
        return np.zeros_like(delta)


def test_convergence_is_tested_before_correction(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    rec = _Recorder()
    _, rep = sisa_solve(system, rec, SolveConfig(eps_sisa=1e-8, max_iter=500))
    # the final iterate is not corrected; every corrected change is above tolerance
    assert len(rec.seen) == rep.n_iter - 1
    assert all(c >= 1e-8 for _, c in rec.seen)
    assert rep.change_history[-1] < 1e-8
    assert [l for l, _ in rec.seen] == list(range(1, rep.n_iter))


def test_sweep_count_is_iterations_plus_one(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    _, rep = sisa_solve(system, DsaCorrection(), SolveConfig(eps_sisa=1e-10))
    assert rep.n_sweep == rep.n_iter + 1


def test_dsa_beats_si_in_thick_slab():
    system = homogeneous_slab(100.0, 1.0, 100, 8)
    cfg = SolveConfig(eps_sisa=1e-10, max_iter=600)
    _, dsa = sisa_solve(system, DsaCorrection(), cfg)
    _, si = sisa_solve(system, NoCorrection(), cfg)
    assert dsa.converged and dsa.n_sweep <= 30
    assert si.n_sweep > 500


def test_si_dsa_demo_slab_sweep_count():
    system = homogeneous_slab(1.0, 10.0, 400, 16)
    rho, rep = sisa_solve(system, DsaCorrection(), SolveConfig(eps_sisa=1e-11))
    assert rep.converged
    assert rep.n_sweep <= 21  # reference count is about 19
    assert rep.final_residual < 1e-10


def test_initial_guess_is_used(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    ref = dense_density(system)
    _, rep = sisa_solve(system, DsaCorrection(), SolveConfig(eps_sisa=1e-10, initial_guess=ref))
    assert rep.n_iter == 1 and rep.n_sweep == 2


# ---------------------------------------------------------------- DSA operator


def test_preconditioner_equivalence_identity(tiny_square):
    """One SI-DSA step equals a Richardson step on the preconditioned system."""
    problem, mesh, space, quad = tiny_square
    system = assemble(problem, mesh, space, quad, [1.0, 1.5], fold_z=True)
    op = build_dsa(system)
    b = system.rhs_bar(count=False)
    rng = np.random.default_rng(4)
    rho = rng.standard_normal(system.n_dof)
    star = system.apply_L(rho, count=False) + b
    si_dsa = star + dsa_correct(op, system, star - rho)
    r = b - (rho - system.apply_L(rho, count=False))
    richardson = rho + r + dsa_correct(op, system, r)
    np.testing.assert_allclose(si_dsa, richardson, atol=1e-12)


def test_dsa_operator_is_linear_and_solves_to_tolerance(tiny_square):
    problem, mesh, space, quad = tiny_square
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    op = build_dsa(system)
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, system.n_dof))
    np.testing.assert_allclose(op.solve(2 * x - y), 2 * op.solve(x) - op.solve(y), atol=1e-11)
    assert np.all(op.solve(np.zeros(system.n_dof)) == 0)
    op.rel_tol = 1e-300
    with pytest.raises(DsaSolveError):
        op.solve(x)


def test_dsa_requires_symmetric_quadrature(tiny_slab):
    from romsa.quadrature import AngularQuadrature

    problem, mesh, space, _ = tiny_slab
    quad = AngularQuadrature(np.array([[0.3], [-0.5]]), np.array([0.5, 0.5]), "slab1d")
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    with pytest.raises(ValueError):
        build_dsa(system)


def _eliminated_diffusion_image(n, rho, target):
    """Apply the current-eliminated diffusion operator to the projection of ``rho``."""
    prob = ProblemDefinition("d", "slab1d", lambda mu, x: 0 * x, lambda mu, x: 0 * x + 1.0,
                             param_names=(), param_ranges=())
    mesh = uniform_slab(0.0, 1.0, n)
    space = build_dg_space(mesh)
    system = assemble(prob, mesh, space, gauss_legendre(8), [])
    mat, N = build_dsa(system).matrix.tocsc(), system.n_dof
    r = space.project(rho)
    out = mat[:N, :N] @ r - mat[:N, N:] @ spla.spsolve(mat[N:, N:].tocsc(), mat[N:, :N] @ r)
    return np.abs(space.cell_means(out) - space.cell_means(space.project(target))).max()


def test_eliminated_diffusion_operator_is_second_order_consistent():
    """sigma_s = sigma_t = 1: E rho ~ -rho''/3 for a smooth bump vanishing with its slope at the edges."""
    rho = lambda x: np.sin(np.pi * x) ** 4
    d2 = lambda x: np.pi**2 * (12 * np.sin(np.pi * x) ** 2 * np.cos(np.pi * x) ** 2 - 4 * np.sin(np.pi * x) ** 4)
    errs = np.array([_eliminated_diffusion_image(n, rho, lambda x: -d2(x) / 3) for n in (20, 40, 80, 160)])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates > 1.9), rates
    assert errs[-1] < 5e-3


# ---------------------------------------------------------------- GMRES


def test_gmres_sweep_accounting(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    _, rep = gmres_solve(system, "dsa", SolveConfig(gmres_rel_tol=1e-12, gmres_restart=50))
    # b_bar + initial residual + inner iterations + final explicit residual
    assert rep.n_sweep == rep.n_iter + 3


def test_unpreconditioned_gmres_with_restarts(tiny_square):
    problem, mesh, space, quad = tiny_square
    system = assemble(problem, mesh, space, quad, [1.0, 2.0])
    rho, rep = gmres_solve(system, None, SolveConfig(gmres_rel_tol=1e-12, gmres_restart=3, max_iter=200))
    assert rep.converged and rep.label == "GMRES"
    assert np.abs(rho - dense_density(system)).max() < 1e-10


def test_gmres_with_exact_initial_guess_stops_immediately(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    ref = dense_density(system)
    _, rep = gmres_solve(system, "dsa", SolveConfig(gmres_rel_tol=1e-10), initial_guess=ref)
    assert rep.converged and rep.n_iter == 0 and rep.n_sweep == 2


def test_gmres_rejects_unknown_preconditioner(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    with pytest.raises(ValueError):
        gmres_solve(system, "ilu")


# ---------------------------------------------------------------- reports


@given(st.booleans(), st.integers(0, 10**6), st.floats(0, 1e3, allow_nan=False))
def test_report_record_round_trip(conv, n, secs):
    rep = SolveReport(conv, n, [1.0, 0.5], 1.25e-12, secs, "ROMSAD-3,5", n // 2)
    fields = rep.to_record().split("\t")
    assert fields[0] == "ROMSAD-3,5"
    assert bool(int(fields[1])) == conv and int(fields[2]) == n and int(fields[3]) == n // 2
    assert float(fields[4]) == pytest.approx(1.25e-12, rel=1e-6)
    assert len(SolveReport.record_header().split("\t")) == len(fields)


def test_history_file(tmp_path):
    rep = SolveReport(True, 3, [1e-2, 1e-5, 1e-12], label="DSA")
    write_history(rep, tmp_path / "h.txt")
    data = np.loadtxt(tmp_path / "h.txt")
    np.testing.assert_array_equal(data[:, 0], [1, 2, 3])
    np.testing.assert_array_equal(data[:, 1], rep.change_history)


def test_residual_is_not_counted(tiny_slab):
    problem, mesh, space, quad = tiny_slab
    system = assemble(problem, mesh, space, quad, [1.0, 1.0])
    residual_inf(system, np.zeros(system.n_dof))
    assert system.counter.count == 0


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(eps_sisa=0.0)
    with pytest.raises(ValueError):
        SolveConfig(gmres_restart=0)


@given(st.integers(1, 40), st.integers(1, 40))
def test_nested_dissection_is_a_cell_permutation(nx, ny):
    from romsa.dsa import nested_dissection_cells

    order = nested_dissection_cells(nx, ny)
    np.testing.assert_array_equal(np.sort(order), np.arange(nx * ny))
