"""Consistent P1 diffusion synthetic acceleration.

The kinetic correction equation is closed with the P1 ansatz
``df_j = drho + 3 * sum_b v_b dJ_b`` and tested with the angular moments
``{1, v_x[, v_y]}``. Moments are taken numerically with the same quadrature
and the same upwind operators as the transport discretization, so the
resulting diffusion system is consistent with the sweep. For moment pair
(m, n) with test weight ``P_m`` and trial weight ``Q_n`` the block is::

    sum_a [ <P_m Q_n v_a> D_C,a - 1/2 <P_m Q_n |v_a|> D_J,a ]
        + <P_m Q_n> Sigma_t - <P_m> <Q_n> Sigma_s

with ``D_C = (D^+ + D^-)/2`` and ``D_J = D^+ - D^-`` per axis. The system is
kept in coupled ``(drho, dJ)`` form and factored once; eliminating ``dJ``
would produce a dense Schur complement because ``(Sigma_t - c D_J)^{-1}``
is not sparse.

Before factoring, unknowns are grouped per cell and cells are put in
nested-dissection order on 2D meshes (natural order in 1D, which is banded).
The factorization keeps that order with a relaxed diagonal pivot threshold
(0.1); on an 80x80 mesh this halves LU time and fill compared with COLAMD.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import TransportSystem, dump_triplets

__all__ = ["DsaBuildError", "DsaSolveError", "DsaOperator", "build_dsa", "dsa_correct", "nested_dissection_cells"]

log = logging.getLogger(__name__)


class DsaBuildError(RuntimeError):
    """The diffusion system could not be factored."""


class DsaSolveError(RuntimeError):
    """The diffusion solve missed its residual tolerance."""

    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass(eq=False)
class DsaOperator:
    """Factored consistent diffusion system; ``solve(rhs)`` returns ``drho``."""

    matrix: sp.csc_matrix  # coupled (drho, dJ_x[, dJ_y]) system
    lu: object
    n_dof: int
    rel_tol: float = 1e-10
    variant: str = "consistent-P1-coupled"
    perm: np.ndarray | None = None  # factored ordering of the coupled unknowns

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros(self.n_dof)
        full = np.zeros(self.matrix.shape[0])
        full[: self.n_dof] = rhs
        x = self._lu_solve(full)
        res = np.linalg.norm(self.matrix @ x - full) / np.linalg.norm(full)
        if res > self.rel_tol:
            # one step of iterative refinement before giving up
            x += self._lu_solve(full - self.matrix @ x)
            res = np.linalg.norm(self.matrix @ x - full) / np.linalg.norm(full)
            if res > self.rel_tol:
                raise DsaSolveError(f"diffusion solve residual {res:.2e} > {self.rel_tol:.1e}", res)
        return x[: self.n_dof]

    def _lu_solve(self, b):
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(b[self.perm])
        return x

    def dump(self, path) -> None:
        dump_triplets(self.matrix, path)


def _moment_blocks(system: TransportSystem):
    """Return the coupled sparse diffusion matrix of ``system``."""
    quad = system.quad
    v = quad.streaming
    w = quad.weights
    d = v.shape[1]
    test = [np.ones(quad.n)] + [v[:, a] for a in range(d)]
    trial = [np.ones(quad.n)] + [3.0 * v[:, a] for a in range(d)]
    d_c, d_j = [], []
    for a in range(d):
        dm = system.axis_operator(a, +1)  # D^- (upwind for v_a > 0)
        dp = system.axis_operator(a, -1)  # D^+
        d_c.append(0.5 * (dp + dm))
        d_j.append(dp - dm)
    st, ss = system.sigma_t, system.sigma_s
    rows = []
    for pm in test:
        row = []
        for qn in trial:
            blk = (w * pm * qn).sum() * st - (w * pm).sum() * (w * qn).sum() * ss
            for a in range(d):
                c = (w * pm * qn * v[:, a]).sum()
                jmp = (w * pm * qn * np.abs(v[:, a])).sum()
                if abs(c) > 1e-15:
                    blk = blk + c * d_c[a]
                if abs(jmp) > 1e-15:
                    blk = blk - 0.5 * jmp * d_j[a]
            row.append(blk)
        rows.append(row)
    return sp.bmat(rows, format="csc")


def nested_dissection_cells(nx: int, ny: int, leaf: int = 16) -> np.ndarray:
    """Row-major cell indices of an ``nx x ny`` grid in nested-dissection order.

    The longer side is split by a separator line that is numbered after both
    halves, recursively, until a block has at most ``leaf`` cells.
    """
    out = []

    def split(x0, x1, y0, y1):
        if (x1 - x0) * (y1 - y0) <= leaf:
            out.extend(j * nx + i for j in range(y0, y1) for i in range(x0, x1))
        elif x1 - x0 >= y1 - y0:
            m = (x0 + x1) // 2
            split(x0, m, y0, y1)
            split(m + 1, x1, y0, y1)
            out.extend(j * nx + m for j in range(y0, y1))
        else:
            m = (y0 + y1) // 2
            split(x0, x1, y0, m)
            split(x0, x1, m + 1, y1)
            out.extend(m * nx + i for i in range(x0, x1))

    split(0, nx, 0, ny)
    return np.asarray(out, dtype=np.int64)


def _cell_grouped_permutation(system: TransportSystem) -> np.ndarray:
    """Coupled unknowns grouped by cell, cells in a fill-reducing order."""
    mesh = system.mesh
    cells = np.arange(mesh.n_cells) if mesh.dim == 1 else nested_dissection_cells(mesh.nx, mesh.ny)
    n, nb = system.n_dof, system.nb
    fields = np.arange(1 + mesh.dim) * n
    return (cells[:, None, None] * nb + fields[None, :, None] + np.arange(nb)[None, None, :]).ravel()


def build_dsa(system: TransportSystem, quad=None, rel_tol: float = 1e-10,
              dump_path=None) -> DsaOperator:
    """Build and factor the consistent diffusion correction for ``system``.

    Parameters
    ----------
    system : TransportSystem
    quad : AngularQuadrature, optional
        Defaults to ``system.quad``; must contain antipodal pairs.
    rel_tol : float
        Relative residual required of every diffusion solve.
    dump_path : path-like, optional
        Write the coupled matrix as triplets.
    """
    quad = system.quad if quad is None else quad
    if quad is not system.quad:
        raise ValueError("DSA must use the quadrature of the transport system")
    if np.any(quad.antipode() < 0):
        raise ValueError("DSA moments need a quadrature closed under v -> -v")
    mat = _moment_blocks(system)
    perm = _cell_grouped_permutation(system)
    try:
        lu = spla.splu(mat[perm][:, perm].tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.1)
    except RuntimeError as exc:
        raise DsaBuildError(f"diffusion system is singular: {exc}") from exc
    op = DsaOperator(mat, lu, system.n_dof, rel_tol, perm=perm)
    if dump_path is not None:
        op.dump(dump_path)
    return op


def dsa_correct(op: DsaOperator, system: TransportSystem, delta_rho) -> np.ndarray:
    """``drho = C Sigma_s delta_rho``."""
    return op.solve(system.scatter(delta_rho))
