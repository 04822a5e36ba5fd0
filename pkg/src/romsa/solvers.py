"""Outer iterations: source iteration with synthetic acceleration and
DSA-preconditioned restarted GMRES, both on the density-only fixed point
``(I - L) rho = b_bar``.

Sweep accounting: one sweep builds ``b_bar``; each application of ``L`` is one
sweep. Diagnostic residuals are not counted.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .assembly import TransportSystem
from .dsa import DsaOperator, build_dsa, dsa_correct

__all__ = [
    "SolveConfig",
    "SolveReport",
    "CorrectionStrategy",
    "NoCorrection",
    "DsaCorrection",
    "ExactKineticCorrection",
    "sisa_solve",
    "gmres_solve",
    "residual_inf",
    "write_history",
]

log = logging.getLogger(__name__)


@dataclass
class SolveConfig:
    """Outer-solver settings.

    ``eps_sisa`` is an absolute tolerance on ``||rho^(l,*) - rho^(l-1)||_inf``
    over DG coefficients; ``gmres_rel_tol`` bounds the preconditioned relative
    residual.
    """

    eps_sisa: float = 1e-11
    max_iter: int = 1000
    gmres_restart: int = 25
    gmres_rel_tol: float = 1e-11
    initial_guess: np.ndarray | None = None

    def __post_init__(self):
        if self.eps_sisa <= 0:
            raise ValueError("eps_sisa must be positive")
        if self.gmres_restart < 1:
            raise ValueError("gmres_restart must be >= 1")


@dataclass
class SolveReport:
    converged: bool
    n_sweep: int
    change_history: list = field(default_factory=list)
    final_residual: float = float("nan")
    wall_seconds: float = 0.0
    label: str = ""
    n_iter: int = 0

    def to_record(self, sep: str = "\t") -> str:
        """One delimited text line: label, converged, n_sweep, n_iter, residual, seconds."""
        vals = [self.label, str(int(self.converged)), str(self.n_sweep), str(self.n_iter),
                f"{self.final_residual:.6e}", f"{self.wall_seconds:.6f}"]
        return sep.join(vals)

    @staticmethod
    def record_header(sep: str = "\t") -> str:
        return sep.join(["label", "converged", "n_sweep", "n_iter", "residual_inf", "seconds"])


def write_history(report: SolveReport, path) -> None:
    """Two-column ``iteration value`` text file of the change history."""
    with open(path, "w") as fh:
        fh.write(f"# {report.label}\n")
        for k, v in enumerate(report.change_history, start=1):
            fh.write(f"{k} {v:.17e}\n")


class CorrectionStrategy:
    """Correction hook of source iteration.

    ``setup`` is called once per solve; ``correct(l, delta_rho)`` returns the
    density correction added to ``rho^(l,*)``.
    """

    label = "SI"

    def setup(self, system: TransportSystem) -> None:
        self.system = system

    def correct(self, l: int, delta_rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class NoCorrection(CorrectionStrategy):
    label = "SI"

    def correct(self, l, delta_rho):
        return np.zeros_like(delta_rho)


class DsaCorrection(CorrectionStrategy):
    """Consistent diffusion correction; factored at setup unless supplied."""

    label = "DSA"

    def __init__(self, op: DsaOperator | None = None):
        self.op = op

    def setup(self, system):
        super().setup(system)
        if self.op is None or self.op.n_dof != system.n_dof:
            self.op = build_dsa(system)

    def correct(self, l, delta_rho):
        return dsa_correct(self.op, self.system, delta_rho)


class ExactKineticCorrection(CorrectionStrategy):
    """Dense solve of the full kinetic correction equation (tiny problems).

    With exact corrections the iteration lands on the fixed point after one
    correction, so it stops within two steps.
    """

    label = "EXACT"

    def setup(self, system):
        super().setup(system)
        self._lu = None
        A = system.dense_A()
        from scipy.linalg import lu_factor

        self._lu = lu_factor(A)

    def correct(self, l, delta_rho):
        from scipy.linalg import lu_solve

        s = self.system
        rhs = np.tile(s.scatter(delta_rho), s.quad.n)
        df = lu_solve(self._lu, rhs).reshape(s.quad.n, -1)
        return s.quad.weights @ df


def residual_inf(system: TransportSystem, rho, b_bar=None) -> float:
    """``||(I - L) rho - b_bar||_inf``; sweeps are not counted."""
    if b_bar is None:
        b_bar = system.rhs_bar(count=False)
    rho = np.asarray(rho, dtype=float)
    return float(np.abs(rho - system.apply_L(rho, count=False) - b_bar).max())


def sisa_solve(system: TransportSystem, strategy: CorrectionStrategy | None = None,
               config: SolveConfig | None = None, label: str | None = None):
    """Source iteration with synthetic acceleration.

    The change ``rho^(l,*) - rho^(l-1)`` is tested before the correction is
    applied; on convergence ``rho^(l,*)`` is returned.

    Returns
    -------
    rho : ndarray
    report : SolveReport
    """
    config = SolveConfig() if config is None else config
    strategy = NoCorrection() if strategy is None else strategy
    t0 = time.perf_counter()
    c0 = system.counter.count
    strategy.setup(system)
    b_bar = system.rhs_bar()
    rho = np.zeros(system.n_dof) if config.initial_guess is None else np.array(config.initial_guess, dtype=float)
    history = []
    converged = False
    for l in range(1, config.max_iter + 1):
        rho_star = system.apply_L(rho) + b_bar
        delta = rho_star - rho
        change = float(np.abs(delta).max())
        history.append(change)
        if not np.isfinite(change):
            log.warning("source iteration diverged at l=%d", l)
            rho = rho_star
            break
        if change < config.eps_sisa:
            rho = rho_star
            converged = True
            break
        rho = rho_star + strategy.correct(l, delta)
    n_sweep = system.counter.count - c0
    wall = time.perf_counter() - t0
    report = SolveReport(converged, n_sweep, history, residual_inf(system, rho, b_bar), wall,
                         label or strategy.label, len(history))
    if not converged:
        log.warning("%s did not converge in %d iterations", report.label, config.max_iter)
    return rho, report


def gmres_solve(system: TransportSystem, preconditioner: DsaOperator | str | None = "dsa",
                config: SolveConfig | None = None, initial_guess=None, label: str | None = None):
    """Restarted GMRES on ``(I - L) rho = b_bar`` with left preconditioner
    ``P = I + C Sigma_s``.

    The stopping test uses the relative residual ``||P r|| / ||P b_bar||`` of
    the preconditioned system, estimated by Givens rotations and confirmed
    with an explicit residual. ``config.max_iter`` caps restart cycles.
    """
    config = SolveConfig() if config is None else config
    t0 = time.perf_counter()
    c0 = system.counter.count
    if isinstance(preconditioner, str):
        if preconditioner != "dsa":
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        preconditioner = build_dsa(system)
    C = preconditioner

    def prec(y):
        return y if C is None else y + dsa_correct(C, system, y)

    def op(x):
        return x - system.apply_L(x)

    b_bar = system.rhs_bar()
    if initial_guess is None:
        initial_guess = config.initial_guess
    x = np.zeros(system.n_dof) if initial_guess is None else np.array(initial_guess, dtype=float)
    pb_norm = np.linalg.norm(prec(b_bar))
    if pb_norm == 0.0:
        pb_norm = 1.0
    r = prec(b_bar - op(x))
    beta = np.linalg.norm(r)
    history = [beta / pb_norm]
    tol = config.gmres_rel_tol
    m = config.gmres_restart
    n_inner = 0
    converged = beta / pb_norm <= tol
    for _ in range(config.max_iter):
        if converged:
            break
        V = np.zeros((m + 1, system.n_dof))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for i in range(m):
            w = prec(op(V[i]))
            n_inner += 1
            for j in range(i + 1):  # modified Gram-Schmidt
                H[j, i] = w @ V[j]
                w -= H[j, i] * V[j]
            H[i + 1, i] = np.linalg.norm(w)
            breakdown = H[i + 1, i] <= 1e-14 * abs(H[i, i])
            if not breakdown:
                V[i + 1] = w / H[i + 1, i]
            for j in range(i):
                hj, hj1 = H[j, i], H[j + 1, i]
                H[j, i] = cs[j] * hj + sn[j] * hj1
                H[j + 1, i] = -sn[j] * hj + cs[j] * hj1
            den = np.hypot(H[i, i], H[i + 1, i])
            cs[i], sn[i] = H[i, i] / den, H[i + 1, i] / den
            H[i, i] = den
            H[i + 1, i] = 0.0
            g[i + 1] = -sn[i] * g[i]
            g[i] = cs[i] * g[i]
            k = i + 1
            history.append(abs(g[i + 1]) / pb_norm)
            if history[-1] <= tol or breakdown:
                break
        y = solve_triangular(H[:k, :k], g[:k])
        x = x + V[:k].T @ y
        r = prec(b_bar - op(x))
        beta = np.linalg.norm(r)
        converged = beta / pb_norm <= tol
        if beta == 0.0:
            break
    n_sweep = system.counter.count - c0
    tag = "PGMRES" if C is not None else "GMRES"
    report = SolveReport(bool(converged), n_sweep, history, residual_inf(system, x, b_bar),
                         time.perf_counter() - t0, label or tag, n_inner)
    if not converged:
        log.warning("%s did not converge", report.label)
    return x, report
