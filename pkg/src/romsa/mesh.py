"""Slab and tensor-product rectangular meshes and the orthonormal Q1 DG space."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Mesh", "DgSpace", "slab_mesh", "uniform_slab", "rect_mesh", "build_dg_space"]

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Cell partition of a slab or a rectangle.

    2D cells are numbered row-major: ``c = iy * nx + ix``.
    """

    geometry: str
    x_edges: np.ndarray
    y_edges: np.ndarray | None = None

    def __post_init__(self):
        if self.geometry not in ("slab1d", "xy2d"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        for e in (self.x_edges, self.y_edges):
            if e is None:
                continue
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("cell boundaries must be strictly increasing")
        if (self.geometry == "xy2d") != (self.y_edges is not None):
            raise ValueError("xy2d meshes need y_edges; slab meshes must not have them")

    @property
    def dim(self) -> int:
        return 1 if self.geometry == "slab1d" else 2

    @property
    def nx(self) -> int:
        return self.x_edges.size - 1

    @property
    def ny(self) -> int:
        return 1 if self.y_edges is None else self.y_edges.size - 1

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> np.ndarray:
        """Per-cell width along x, shape (n_cells,)."""
        return np.tile(np.diff(self.x_edges), self.ny)

    @property
    def hy(self) -> np.ndarray:
        if self.y_edges is None:
            return np.ones(self.n_cells)
        return np.repeat(np.diff(self.y_edges), self.nx)

    @property
    def widths(self) -> np.ndarray:
        """Per-axis cell widths, shape (n_cells, dim)."""
        if self.dim == 1:
            return self.hx[:, None]
        return np.stack([self.hx, self.hy], axis=1)

    @property
    def measure(self) -> np.ndarray:
        return self.hx * self.hy if self.dim == 2 else self.hx

    @property
    def centers(self) -> np.ndarray:
        """Cell centers, shape (n_cells, dim)."""
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        if self.dim == 1:
            return xc[:, None]
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        return np.stack([np.tile(xc, self.ny), np.repeat(yc, self.nx)], axis=1)

    def neighbor(self, axis: int, step: int) -> np.ndarray:
        """Index of the neighbor one cell along ``axis`` (step=+1 or -1); -1 at the boundary."""
        c = np.arange(self.n_cells)
        ix, iy = c % self.nx, c // self.nx
        if axis == 0:
            jx = ix + step
            ok = (jx >= 0) & (jx < self.nx)
            return np.where(ok, iy * self.nx + jx, -1)
        jy = iy + step
        ok = (jy >= 0) & (jy < self.ny)
        return np.where(ok, jy * self.nx + ix, -1)


def slab_mesh(edges) -> Mesh:
    return Mesh("slab1d", np.asarray(edges, dtype=float))


def uniform_slab(a: float, b: float, n: int) -> Mesh:
    return slab_mesh(np.linspace(a, b, n + 1))


def rect_mesh(x0, x1, y0, y1, nx, ny) -> Mesh:
    return Mesh("xy2d", np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))


def _legendre_ref(xi):
    """Orthonormal P1 Legendre on [-1, 1] w.r.t. the measure dxi/2."""
    xi = np.asarray(xi, dtype=float)
    return np.stack([np.ones_like(xi), SQRT3 * xi], axis=-1)


@dataclass(frozen=True, eq=False)
class DgSpace:
    """Piecewise Q1 space with a per-cell orthonormal (scaled Legendre) basis.

    Local index in 2D is ``l = 2 * b + a`` with ``a`` the x-degree and ``b``
    the y-degree; global dof is ``c * nb + l``.
    """

    mesh: Mesh
    K: int = 1
    n_quad: int = 4
    _ref: dict = field(default_factory=dict, repr=False)

    @property
    def nb(self) -> int:
        return (self.K + 1) ** self.mesh.dim

    @property
    def n_dof(self) -> int:
        return self.mesh.n_cells * self.nb

    def dof(self, cell, local):
        return np.asarray(cell) * self.nb + np.asarray(local)

    # reference-cell data -------------------------------------------------
    def ref_points(self):
        """Reference Gauss points (nq, dim) in [-1,1]^d, weights normalized to sum 1,
        and basis values (nq, nb)."""
        if "pts" not in self._ref:
            g, w = np.polynomial.legendre.leggauss(self.n_quad)
            w = w / 2.0
            p = _legendre_ref(g)
            if self.mesh.dim == 1:
                pts, wts, vals = g[:, None], w, p
            else:
                gx, gy = np.meshgrid(g, g, indexing="xy")
                wx, wy = np.meshgrid(w, w, indexing="xy")
                pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
                wts = (wx * wy).ravel()
                px = _legendre_ref(pts[:, 0])
                py = _legendre_ref(pts[:, 1])
                vals = np.einsum("qb,qa->qba", py, px).reshape(-1, 4)
            self._ref["pts"] = (pts, wts, vals)
        return self._ref["pts"]

    def physical_points(self):
        """Quadrature points in every cell: list of coordinate arrays, each (n_cells, nq)."""
        pts, _, _ = self.ref_points()
        m = self.mesh
        x0 = np.tile(m.x_edges[:-1], m.ny)
        xs = x0[:, None] + 0.5 * (pts[None, :, 0] + 1.0) * m.hx[:, None]
        if m.dim == 1:
            return [xs]
        y0 = np.repeat(m.y_edges[:-1], m.nx)
        ys = y0[:, None] + 0.5 * (pts[None, :, 1] + 1.0) * m.hy[:, None]
        return [xs, ys]

    def mass_blocks(self, values: np.ndarray) -> np.ndarray:
        """Weighted mass blocks ``int s phi_k phi_l`` per cell from field samples
        at the quadrature points, shape (n_cells, nb, nb)."""
        _, w, v = self.ref_points()
        return np.einsum("cq,q,qk,ql->ckl", values, w, v, v)

    def project(self, func) -> np.ndarray:
        """L2 projection of ``func(*coords)`` onto the space (coefficient vector)."""
        coords = self.physical_points()
        vals = np.broadcast_to(func(*coords), coords[0].shape)
        _, w, v = self.ref_points()
        coef = np.einsum("cq,q,qk->ck", vals, w, v) * np.sqrt(self.mesh.measure)[:, None]
        return coef.ravel()

    def evaluate(self, coef: np.ndarray, ref_xi) -> np.ndarray:
        """Evaluate a DG function at reference points ``ref_xi`` (m, dim) of every cell."""
        ref_xi = np.atleast_2d(ref_xi)
        if self.mesh.dim == 1:
            vals = _legendre_ref(ref_xi[:, 0])
        else:
            px = _legendre_ref(ref_xi[:, 0])
            py = _legendre_ref(ref_xi[:, 1])
            vals = np.einsum("mb,ma->mba", py, px).reshape(-1, 4)
        c = coef.reshape(self.mesh.n_cells, self.nb)
        return (c @ vals.T) / np.sqrt(self.mesh.measure)[:, None]

    def cell_means(self, coef: np.ndarray) -> np.ndarray:
        c = coef.reshape(self.mesh.n_cells, self.nb)
        return c[:, 0] / np.sqrt(self.mesh.measure)


def build_dg_space(mesh: Mesh, K: int = 1) -> DgSpace:
    """Orthonormal piecewise-linear (K=1) DG space on ``mesh``."""
    if K != 1:
        raise ValueError(f"only linear elements (K=1) are supported, got K={K}")
    return DgSpace(mesh, K)
