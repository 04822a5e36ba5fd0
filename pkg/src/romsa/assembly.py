"""Upwind DG S_N assembly and the matrix-free transport sweep.

The per-direction streaming operator on a tensor mesh splits by axis:
``D_j = sum_a v_a * D_a^{sign(v_a)}`` where ``D_a^-`` (used for ``v_a > 0``)
and ``D_a^+`` (``v_a < 0``) are the one-sided upwind operators along axis
``a``. Directions that share their in-plane velocity (``+-v_z`` pairs in X-Y
geometry) can be folded into one direction class; a class carries the summed
quadrature weight and its multiplicity.
"""

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .mesh import SQRT3, DgSpace, Mesh
from .problem import ProblemDefinition
from .quadrature import AngularQuadrature

__all__ = [
    "AffineMismatchError",
    "SweepError",
    "DirectionClasses",
    "TransportSystem",
    "assemble",
    "sweep",
    "apply_transport_fixed_point",
    "assemble_rhs",
    "dump_triplets",
]

log = logging.getLogger(__name__)

# reference P1 pieces along one axis
_S1 = np.array([[0.0, 0.0], [SQRT3, 0.0]])  # int p_k' p_l dxi on [-1,1] / 2
_TM = np.array([1.0, -SQRT3])  # p(-1)
_TP = np.array([1.0, SQRT3])  # p(+1)
_I2 = np.eye(2)


class AffineMismatchError(ValueError):
    """The declared affine expansion does not reproduce the cross sections."""


class SweepError(RuntimeError):
    """A per-cell block of D_j + Sigma_t could not be inverted."""


class SweepCounter:
    """Counts full transport sweeps (one pass over all directions)."""

    def __init__(self):
        self.count = 0


def _lift(m: np.ndarray, axis: int, dim: int) -> np.ndarray:
    """Lift a 2x2 axis operator to the local Q1 basis (index ``2 * b + a``)."""
    if dim == 1:
        return m
    return np.kron(_I2, m) if axis == 0 else np.kron(m, _I2)


@dataclass(frozen=True, eq=False)
class DirectionClasses:
    """Groups of ordinates with identical streaming velocity."""

    velocity: np.ndarray  # (n_class, dim)
    weight: np.ndarray  # summed quadrature weight per class
    multiplicity: np.ndarray  # members per class
    index: np.ndarray  # class of every ordinate, (n_v,)
    quadrant: np.ndarray  # bit a set iff velocity[:, a] < 0

    @property
    def n(self) -> int:
        return self.weight.size

    @classmethod
    def build(cls, quad: AngularQuadrature, fold_z: bool = False) -> "DirectionClasses":
        v = quad.streaming
        if fold_z and quad.geometry == "xy2d":
            key = np.round(v, 13)
            _, first, index = np.unique(key, axis=0, return_index=True, return_inverse=True)
            # keep classes in order of first appearance
            rank = np.argsort(np.argsort(first))
            index = rank[index.ravel()]
            nc = first.size
            vel = np.empty((nc, v.shape[1]))
            vel[index] = v
        else:
            index = np.arange(quad.n)
            vel = v.copy()
            nc = quad.n
        weight = np.bincount(index, weights=quad.weights, minlength=nc)
        mult = np.bincount(index, minlength=nc)
        quadrant = np.zeros(nc, dtype=np.int64)
        for a in range(vel.shape[1]):
            quadrant |= (vel[:, a] < 0).astype(np.int64) << a
        return cls(vel, weight, mult, index, quadrant)


@numba.njit(cache=True)
def _sweep_kernel(orders, up_nbr, up_coef, quadrant, speed, binv, rhs, rhs_extra, use_extra, out):
    nu = binv.shape[0]
    nc = binv.shape[1]
    nb = binv.shape[2]
    d = speed.shape[1]
    r = np.empty(nb)
    for u in range(nu):
        q = quadrant[u]
        for idx in range(nc):
            c = orders[q, idx]
            for k in range(nb):
                r[k] = rhs[c, k]
                if use_extra:
                    r[k] += rhs_extra[u, c, k]
            for a in range(d):
                n = up_nbr[q, c, a]
                if n >= 0:
                    s = speed[u, a]
                    for k in range(nb):
                        acc = 0.0
                        for l in range(nb):
                            acc += up_coef[q, c, a, k, l] * out[u, n, l]
                        r[k] += s * acc
            for k in range(nb):
                acc = 0.0
                for l in range(nb):
                    acc += binv[u, c, k, l] * r[l]
                out[u, c, k] = acc


class TransportSystem:
    """Discrete operators of the S_N upwind-DG system at one parameter value.

    Treated as immutable after :func:`assemble`; only the sweep counter changes.
    """

    def __init__(self, problem, mesh, space, quad, mu, classes, sigma_t_blocks,
                 sigma_s_blocks, source, inflow, terms):
        self.problem: ProblemDefinition = problem
        self.mesh: Mesh = mesh
        self.space: DgSpace = space
        self.quad: AngularQuadrature = quad
        self.mu = mu
        self.classes: DirectionClasses = classes
        self.sigma_t_blocks = sigma_t_blocks
        self.sigma_s_blocks = sigma_s_blocks
        self.source = source
        self.inflow = inflow  # (n_class, n_dof)
        self.terms = terms  # list of (name, psi value, total blocks, scatter blocks)
        self.counter = SweepCounter()
        self._axis_ops = {}
        self._prepare_sweeps()

    # sizes --------------------------------------------------------------
    @property
    def n_dof(self) -> int:
        return self.space.n_dof

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    @property
    def nb(self) -> int:
        return self.space.nb

    @property
    def dim(self) -> int:
        return self.mesh.dim

    # block-diagonal mass operators --------------------------------------
    @staticmethod
    def _bsr(blocks):
        nc = blocks.shape[0]
        return sp.bsr_matrix((blocks, np.arange(nc), np.arange(nc + 1))).tocsr()

    @property
    def sigma_t(self) -> sp.csr_matrix:
        return self._bsr(self.sigma_t_blocks)

    @property
    def sigma_s(self) -> sp.csr_matrix:
        return self._bsr(self.sigma_s_blocks)

    @property
    def sigma_a(self) -> sp.csr_matrix:
        return self._bsr(self.sigma_t_blocks - self.sigma_s_blocks)

    def apply_blocks(self, blocks, x):
        x = np.asarray(x)
        if x.ndim == 1:
            return np.einsum("ckl,cl->ck", blocks, x.reshape(self.n_cells, self.nb)).ravel()
        y = np.einsum("ckl,clr->ckr", blocks, x.reshape(self.n_cells, self.nb, -1))
        return y.reshape(self.n_dof, -1)

    def scatter(self, rho):
        return self.apply_blocks(self.sigma_s_blocks, rho)

    # streaming operators ------------------------------------------------
    def axis_operator(self, axis: int, sign: int) -> sp.csr_matrix:
        """Global one-sided operator ``D_axis^-`` (sign=+1, used for v>0) or
        ``D_axis^+`` (sign=-1, used for v<0)."""
        key = (axis, sign)
        if key not in self._axis_ops:
            self._axis_ops[key] = self._build_axis_operator(axis, sign)
        return self._axis_ops[key]

    def _build_axis_operator(self, axis, sign):
        m, nb, d = self.mesh, self.nb, self.dim
        h = m.widths[:, axis]
        nbr = m.neighbor(axis, -1 if sign > 0 else +1)
        if sign > 0:
            diag1 = -2.0 * _S1 + np.outer(_TP, _TP)
            off1 = -np.outer(_TM, _TP)
        else:
            diag1 = -2.0 * _S1 - np.outer(_TM, _TM)
            off1 = np.outer(_TP, _TM)
        diag = _lift(diag1, axis, d)
        off = _lift(off1, axis, d)
        rows, cols, data = [], [], []
        li, lj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
        cells = np.arange(m.n_cells)
        for c_arr, n_arr, blk, scale in (
            (cells, cells, diag, 1.0 / h),
            (cells[nbr >= 0], nbr[nbr >= 0], off, None),
        ):
            if scale is None:
                scale = 1.0 / np.sqrt(h[c_arr] * h[n_arr])
            rows.append((c_arr[:, None, None] * nb + li[None]).ravel())
            cols.append((n_arr[:, None, None] * nb + lj[None]).ravel())
            data.append((scale[:, None, None] * blk[None]).ravel())
        n = self.n_dof
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def streaming_matrix(self, velocity) -> sp.csr_matrix:
        """``D_j`` for a streaming velocity (length ``dim``)."""
        out = None
        for a, va in enumerate(np.atleast_1d(velocity)):
            if va == 0.0:
                continue
            term = va * self.axis_operator(a, 1 if va > 0 else -1)
            out = term if out is None else out + term
        if out is None:
            out = sp.csr_matrix((self.n_dof, self.n_dof))
        return out

    # sweep data ---------------------------------------------------------
    def _prepare_sweeps(self):
        m, nb, d = self.mesh, self.nb, self.dim
        nq = 2**d
        nc = m.n_cells
        widths = m.widths
        orders = np.empty((nq, nc), dtype=np.int64)
        up_nbr = np.full((nq, nc, d), -1, dtype=np.int64)
        up_coef = np.zeros((nq, nc, d, nb, nb))
        diag = np.zeros((nq, d, nc, nb, nb))  # per unit speed
        for q in range(nq):
            neg = [(q >> a) & 1 for a in range(d)]
            xs = np.arange(m.nx)[::-1] if neg[0] else np.arange(m.nx)
            if d == 1:
                orders[q] = xs
            else:
                ys = np.arange(m.ny)[::-1] if neg[1] else np.arange(m.ny)
                orders[q] = (ys[:, None] * m.nx + xs[None, :]).ravel()
            for a in range(d):
                h = widths[:, a]
                if not neg[a]:
                    nbr = m.neighbor(a, -1)
                    blk1 = np.outer(_TM, _TP)
                    dg1 = -2.0 * _S1 + np.outer(_TP, _TP)
                else:
                    nbr = m.neighbor(a, +1)
                    blk1 = np.outer(_TP, _TM)
                    dg1 = 2.0 * _S1 + np.outer(_TM, _TM)  # |v| * (...) == v * (-2 S1 - tm tm^T)
                up_nbr[q, :, a] = nbr
                ok = nbr >= 0
                scale = np.zeros(nc)
                scale[ok] = 1.0 / np.sqrt(h[ok] * h[nbr[ok]])
                up_coef[q, :, a] = scale[:, None, None] * _lift(blk1, a, d)[None]
                diag[q, a] = (1.0 / h)[:, None, None] * _lift(dg1, a, d)[None]
        cls = self.classes
        speed = np.abs(cls.velocity)
        blocks = np.broadcast_to(self.sigma_t_blocks, (cls.n, nc, nb, nb)).copy()
        for u in range(cls.n):
            q = cls.quadrant[u]
            for a in range(d):
                blocks[u] += speed[u, a] * diag[q, a]
        try:
            binv = np.linalg.inv(blocks)
        except np.linalg.LinAlgError as exc:
            raise SweepError("singular cell block in D_j + Sigma_t") from exc
        if not np.all(np.isfinite(binv)):
            raise SweepError("non-finite inverse of a cell block in D_j + Sigma_t")
        self._orders, self._up_nbr, self._up_coef = orders, up_nbr, up_coef
        self._speed = np.ascontiguousarray(speed)
        self._binv = binv

    def sweep_orders(self):
        """(orders, upwind neighbors) per sign pattern, for audits."""
        return self._orders, self._up_nbr

    # sweeps -------------------------------------------------------------
    def _run(self, rhs_common, extra, classes=None):
        nc, nb = self.n_cells, self.nb
        rhs = np.ascontiguousarray(np.asarray(rhs_common, dtype=float).reshape(nc, nb))
        if not np.all(np.isfinite(rhs)):
            raise ValueError("sweep right-hand side is not finite")
        if classes is None:
            sl = slice(None)
        else:
            sl = slice(classes, classes + 1)
        binv = self._binv[sl]
        nu = binv.shape[0]
        if extra is None:
            ex = np.zeros((1, 1, 1))
        else:
            ex = np.ascontiguousarray(extra[sl].reshape(nu, nc, nb))
        out = np.zeros((nu, nc, nb))
        _sweep_kernel(self._orders, self._up_nbr, self._up_coef, self.classes.quadrant[sl].copy(),
                      self._speed[sl].copy(), binv, rhs, ex, extra is not None, out)
        return out.reshape(nu, self.n_dof)

    def sweep_class(self, u: int, rhs) -> np.ndarray:
        """Solve ``(D_u + Sigma_t) f = rhs`` for one direction class."""
        return self._run(rhs, None, u)[0]

    def sweep_all(self, rhs_common, include_sources: bool = False, count: bool = True) -> np.ndarray:
        """Solve every direction class; returns f of shape (n_class, n_dof).

        With ``include_sources`` the right-hand side is ``rhs_common + G + g_j``.
        """
        if count:
            self.counter.count += 1
        if include_sources:
            return self._run(np.asarray(rhs_common) + self.source, self.inflow)
        return self._run(rhs_common, None)

    def density(self, f: np.ndarray) -> np.ndarray:
        """``rho = sum_j w_j f_j`` in fixed class order."""
        return self.classes.weight @ f

    def apply_L(self, rho, count: bool = True) -> np.ndarray:
        return self.density(self.sweep_all(self.scatter(rho), count=count))

    def rhs_bar(self, count: bool = True) -> np.ndarray:
        return self.density(self.sweep_all(np.zeros(self.n_dof), include_sources=True, count=count))

    # coupled operator on angular fluxes --------------------------------------
    def apply_A(self, f: np.ndarray) -> np.ndarray:
        """Coupled operator on class-ordered fluxes (n_class, n_dof[, r])."""
        return sum(psi * self.apply_component(k, f) for k, psi in enumerate(self.component_psi()))

    def component_psi(self) -> list:
        return [1.0] + [t[1] for t in self.terms]

    def component_names(self) -> list:
        return ["streaming"] + [t[0] for t in self.terms]

    def apply_component(self, k: int, f: np.ndarray) -> np.ndarray:
        """Apply affine component ``A_k`` (k=0 streaming, k>=1 mass terms) to
        class-ordered fluxes, shape (n_class, n_dof) or (n_class, n_dof, r)."""
        out = np.empty_like(f, dtype=float)
        if k == 0:
            for u in range(self.classes.n):
                out[u] = self.streaming_matrix(self.classes.velocity[u]) @ f[u]
            return out
        _, _, total, scat = self.terms[k - 1]
        rho = np.tensordot(self.classes.weight, f, axes=(0, 0))
        srho = self.apply_blocks(scat, rho)
        for u in range(self.classes.n):
            out[u] = self.apply_blocks(total, f[u]) - srho
        return out

    # full-ordinate dense forms (tiny problems and oracles) ------------------
    def expand(self, f_classes: np.ndarray) -> np.ndarray:
        """Class-ordered fluxes to one row per ordinate."""
        return f_classes[self.classes.index]

    def dense_A(self) -> np.ndarray:
        """Dense coupled matrix over all ordinates (tiny problems only)."""
        nv, n = self.quad.n, self.n_dof
        st = self.sigma_t.toarray()
        ss = self.sigma_s.toarray()
        A = np.zeros((nv * n, nv * n))
        v = self.quad.streaming
        for j in range(nv):
            A[j * n:(j + 1) * n, j * n:(j + 1) * n] += self.streaming_matrix(v[j]).toarray() + st
            for i in range(nv):
                A[j * n:(j + 1) * n, i * n:(i + 1) * n] -= self.quad.weights[i] * ss
        return A

    def dense_b(self) -> np.ndarray:
        return (self.source[None, :] + self.inflow[self.classes.index]).ravel()


def _inflow_vectors(problem, space, classes):
    """Boundary vectors ``g_j = -int_{inflow} g phi v.n`` per direction class."""
    m = space.mesh
    nb, d = space.nb, m.dim
    out = np.zeros((classes.n, m.n_cells, nb))
    g, w = np.polynomial.legendre.leggauss(space.n_quad)
    w = w / 2.0
    p = np.stack([np.ones_like(g), SQRT3 * g], axis=-1)
    if d == 1:
        h = m.hx
        sides = (("left", 0, _TM, m.x_edges[0], +1), ("right", m.n_cells - 1, _TP, m.x_edges[-1], -1))
        for side, c, tr, x, direction in sides:
            val = float(problem.inflow_value(side, np.array([x]))[0])
            if val == 0.0:
                continue
            for u in range(classes.n):
                v = classes.velocity[u, 0]
                if v * direction > 0:
                    out[u, c] += abs(v) * val * tr / np.sqrt(h[c])
        return out.reshape(classes.n, -1)
    c_all = np.arange(m.n_cells)
    ix, iy = c_all % m.nx, c_all // m.nx
    hx, hy = m.hx, m.hy
    x0 = np.tile(m.x_edges[:-1], m.ny)
    y0 = np.repeat(m.y_edges[:-1], m.nx)
    for side in ("left", "right", "bottom", "top"):
        if side in ("left", "right"):
            axis = 0
            cells = c_all[ix == (0 if side == "left" else m.nx - 1)]
            xb = m.x_edges[0] if side == "left" else m.x_edges[-1]
            ys = y0[cells, None] + 0.5 * (g[None] + 1.0) * hy[cells, None]
            vals = problem.inflow_value(side, np.full_like(ys, xb), ys)
            tr = _TM if side == "left" else _TP
            # int g phi_k dy = p_a(+-1) sqrt(hy/hx) sum_q w_q g p_b
            mom = np.einsum("cq,q,qb->cb", vals, w, p)
            loc = np.einsum("a,cb->cba", tr, mom).reshape(-1, 4) * np.sqrt(hy[cells] / hx[cells])[:, None]
        else:
            axis = 1
            cells = c_all[iy == (0 if side == "bottom" else m.ny - 1)]
            yb = m.y_edges[0] if side == "bottom" else m.y_edges[-1]
            xs = x0[cells, None] + 0.5 * (g[None] + 1.0) * hx[cells, None]
            vals = problem.inflow_value(side, xs, np.full_like(xs, yb))
            tr = _TM if side == "bottom" else _TP
            mom = np.einsum("cq,q,qa->ca", vals, w, p)
            loc = np.einsum("b,ca->cba", tr, mom).reshape(-1, 4) * np.sqrt(hx[cells] / hy[cells])[:, None]
        if not np.any(loc):
            continue
        direction = +1 if side in ("left", "bottom") else -1
        for u in range(classes.n):
            v = classes.velocity[u, axis]
            if v * direction > 0:
                out[u, cells] += abs(v) * loc
    return out.reshape(classes.n, -1)


def assemble(problem: ProblemDefinition, mesh: Mesh, space: DgSpace, quad: AngularQuadrature,
             mu, fold_z: bool = False, check_affine: bool = True) -> TransportSystem:
    """Assemble the upwind DG S_N system at parameter ``mu``.

    ``fold_z`` sweeps only one of each ``+-v_z`` pair in X-Y geometry; the
    result is identical because paired ordinates obey the same equation.
    """
    if problem.geometry != mesh.geometry or quad.geometry != mesh.geometry:
        raise ValueError("problem, mesh and quadrature geometries differ")
    mu = problem.check_mu(mu)
    coords = space.physical_points()
    sa = np.broadcast_to(problem.sigma_a(mu, *coords), coords[0].shape)
    ss = np.broadcast_to(problem.sigma_s(mu, *coords), coords[0].shape)
    if np.any(sa < 0) or np.any(ss < 0):
        raise ValueError(f"{problem.name}: negative cross section at mu={mu}")
    st_blocks = space.mass_blocks(sa + ss)
    ss_blocks = space.mass_blocks(ss)
    source = space.project(lambda *c: problem.source(*c))
    classes = DirectionClasses.build(quad, fold_z)
    inflow = _inflow_vectors(problem, space, classes)

    terms = []
    if problem.affine is not None:
        for t in problem.affine:
            fa = np.zeros_like(coords[0]) if t.sigma_a is None else np.broadcast_to(t.sigma_a(*coords), coords[0].shape)
            fs = np.zeros_like(coords[0]) if t.sigma_s is None else np.broadcast_to(t.sigma_s(*coords), coords[0].shape)
            terms.append((t.name, float(t.psi(mu)), space.mass_blocks(fa + fs), space.mass_blocks(fs)))
        if check_affine:
            _verify_affine(st_blocks, ss_blocks, terms, problem.name)
    return TransportSystem(problem, mesh, space, quad, mu, classes, st_blocks, ss_blocks, source, inflow, terms)


def _verify_affine(st_blocks, ss_blocks, terms, name):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(st_blocks.shape[0] * st_blocks.shape[1])
    xr = x.reshape(st_blocks.shape[0], -1)

    def app(b):
        return np.einsum("ckl,cl->ck", b, xr).ravel()

    for full, idx in ((st_blocks, 2), (ss_blocks, 3)):
        ref = app(full)
        rec = sum(t[1] * app(t[idx]) for t in terms) if terms else np.zeros_like(ref)
        err = np.linalg.norm(ref - rec)
        scale = max(np.linalg.norm(ref), np.linalg.norm(x))
        if err > 1e-12 * scale:
            raise AffineMismatchError(
                f"{name}: affine expansion mismatch on probe vector (rel err {err / scale:.2e})"
            )


# module-level API -----------------------------------------------------------

def sweep(system: TransportSystem, j: int, rhs) -> np.ndarray:
    """Solve ``(D_j + Sigma_t) f_j = rhs`` for ordinate ``j`` by an upwind sweep."""
    return system.sweep_class(int(system.classes.index[j]), rhs)


def apply_transport_fixed_point(system: TransportSystem, rho) -> np.ndarray:
    """``L rho = sum_j w_j (D_j + Sigma_t)^{-1} Sigma_s rho`` (one transport sweep)."""
    return system.apply_L(rho)


def assemble_rhs(system: TransportSystem) -> np.ndarray:
    """``b_bar = sum_j w_j (D_j + Sigma_t)^{-1} (G + g_j)`` (one transport sweep)."""
    return system.rhs_bar()


def dump_triplets(matrix, path) -> None:
    """Write a matrix as ``row col value`` lines (0-based, tab separated)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("# row\tcol\tvalue\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r}\t{c}\t{v:.17g}\n")
