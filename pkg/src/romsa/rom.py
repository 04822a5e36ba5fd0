"""POD reduced models for the parametric problem and its kinetic correction
equation, plus the online ROMIG, ROMSA and ROMSAD strategies.

Snapshots are kept in class order (see ``DirectionClasses``). A folded class
of multiplicity ``m`` stands for ``m`` identical ordinate rows, so its rows are
stored scaled by ``sqrt(m)``; Euclidean inner products, and therefore the SVD,
are then exactly those of the unfolded snapshot matrix.

Left singular vectors come from a tall-skinny QR over row blocks followed by
an SVD of the small triangular factor. Unlike an eigendecomposition of the
Gram matrix this keeps singular values down to machine precision relative to
the largest one, which the small POD tolerances used here require.
"""

import logging
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .assembly import TransportSystem, assemble
from .dsa import DsaOperator, build_dsa, dsa_correct
from .solvers import CorrectionStrategy, SolveConfig

__all__ = [
    "RomSingularError",
    "SnapshotStore",
    "ArraySource",
    "ReducedModel",
    "collect_snapshots",
    "solve_f_form",
    "truncation_rank",
    "pod_truncate",
    "build_reduced_model",
    "romig",
    "RomsaCorrection",
    "RomsadCorrection",
    "romsad_strategy",
    "romsad_threshold",
]

log = logging.getLogger(__name__)

_GEOM_TAG = {"slab1d": 1, "xy2d": 2}
_TAG_GEOM = {v: k for k, v in _GEOM_TAG.items()}
FORMAT_VERSION = 1


class RomSingularError(RuntimeError):
    """The reduced matrix is numerically singular."""


# --------------------------------------------------------------------------
# snapshots


def solve_f_form(system: TransportSystem, dsa: DsaOperator, config: SolveConfig, keep: int):
    """SI-DSA on the angular-flux form, keeping the first ``keep`` sweeps.

    Returns
    -------
    f : ndarray (n_class, n_dof)
        Angular flux of the final sweep.
    kept : list of ndarray
        ``f^(l)`` for ``l = 1 .. min(n_conv, keep)``.
    n_conv : int
        Iterations to convergence (0 if not converged).
    """
    rho = np.zeros(system.n_dof) if config.initial_guess is None else np.array(config.initial_guess)
    kept = []
    for l in range(1, config.max_iter + 1):
        f = system.sweep_all(system.scatter(rho), include_sources=True)
        if l <= keep:
            kept.append(f)
        rho_star = system.density(f)
        delta = rho_star - rho
        if np.abs(delta).max() < config.eps_sisa:
            return f, kept, l
        rho = rho_star + dsa_correct(dsa, system, delta)
    return f, kept, 0


def _write_header(fh, magic: bytes, fields: tuple):
    fh.write(magic.ljust(8, b"\0"))
    fh.write(struct.pack("<" + "Q" * len(fields), *fields))


def _read_header(fh, magic: bytes, n_fields: int):
    got = fh.read(8)
    if got != magic.ljust(8, b"\0"):
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    return struct.unpack("<" + "Q" * n_fields, fh.read(8 * n_fields))


@dataclass
class SnapshotStore:
    """Training snapshots on disk, one file per parameter.

    File layout (little endian): magic ``RTESNP1``; uint64 fields
    (version, geometry tag, n_class, n_dof, n_param, n_snap, n_conv); float64
    parameter values; float64 data of shape (n_snap, n_class, n_dof) with the
    converged flux first and ``f^(1..w_mu)`` after it.
    """

    directory: Path
    geometry: str
    n_class: int
    n_dof: int
    multiplicity: np.ndarray
    window: int
    eps_train: float
    mus: list = field(default_factory=list)
    n_conv: list = field(default_factory=list)
    files: list = field(default_factory=list)

    _MAGIC = b"RTESNP1"

    def add(self, mu, f, kept, n_conv):
        idx = len(self.mus)
        path = Path(self.directory) / f"snap_{idx:05d}.bin"
        mu = np.atleast_1d(np.asarray(mu, dtype="<f8"))
        with open(path, "wb") as fh:
            _write_header(fh, self._MAGIC, (FORMAT_VERSION, _GEOM_TAG[self.geometry], self.n_class,
                                            self.n_dof, mu.size, 1 + len(kept), n_conv))
            fh.write(mu.tobytes())
            for arr in [f] + list(kept):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        self.mus.append(mu)
        self.n_conv.append(n_conv)
        self.files.append(path)

    def _open(self, i):
        with open(self.files[i], "rb") as fh:
            ver, tag, nc, nd, npar, nsnap, nconv = _read_header(fh, self._MAGIC, 7)
        if ver != FORMAT_VERSION:
            raise ValueError(f"{self.files[i]}: unsupported version {ver}")
        offset = 8 + 8 * 7 + 8 * npar
        return np.memmap(self.files[i], dtype="<f8", mode="r", offset=offset, shape=(nsnap, nc, nd))

    def window_sizes(self) -> list:
        return [self._open(i).shape[0] - 1 for i in range(len(self.files))]

    @classmethod
    def open(cls, directory, window, eps_train, multiplicity):
        """Reopen a directory written by :func:`collect_snapshots`."""
        directory = Path(directory)
        files = sorted(directory.glob("snap_*.bin"))
        if not files:
            raise FileNotFoundError(f"no snapshot files in {directory}")
        mus, nconv = [], []
        for p in files:
            with open(p, "rb") as fh:
                ver, tag, nc, nd, npar, nsnap, nc_ = _read_header(fh, cls._MAGIC, 7)
                mus.append(np.frombuffer(fh.read(8 * npar), dtype="<f8").copy())
            nconv.append(nc_)
        return cls(directory, _TAG_GEOM[tag], nc, nd, np.asarray(multiplicity), window, eps_train,
                   mus, nconv, files)

    def converged(self, i) -> np.ndarray:
        return np.array(self._open(i)[0])

    def intermediate(self, i, l) -> np.ndarray:
        return np.array(self._open(i)[l])

    def source(self, kind: str, window: int | None = None) -> "StoreSource":
        """Snapshot matrix reader; ``window`` keeps only ``f^(1..window)``."""
        if kind not in ("solution", "correction"):
            raise ValueError(f"unknown snapshot kind {kind!r}")
        return StoreSource(self, kind, window)


class StoreSource:
    """Row-block reader of the (scaled) snapshot matrix F or dF."""

    def __init__(self, store: SnapshotStore, kind: str, window: int | None = None):
        self.store = store
        self.kind = kind
        self.window = store.window if window is None else int(window)
        if self.window > store.window:
            raise ValueError(f"window {self.window} exceeds the stored window {store.window}")
        self.n_class = store.n_class
        self.n_dof = store.n_dof
        self.multiplicity = np.asarray(store.multiplicity)
        sizes = store.window_sizes()
        self.n_cols = len(sizes) if kind == "solution" else sum(min(w, self.window) for w in sizes)
        if self.n_cols == 0:
            raise ValueError("snapshot matrix has no columns")

    def block(self, u0, u1) -> np.ndarray:
        scale = np.sqrt(self.multiplicity[u0:u1])[:, None]
        cols = []
        for i in range(len(self.store.files)):
            mm = self.store._open(i)
            f = np.asarray(mm[0, u0:u1])
            if self.kind == "solution":
                cols.append((scale * f).ravel())
            else:
                for l in range(1, min(mm.shape[0], self.window + 1)):
                    cols.append((scale * (f - mm[l, u0:u1])).ravel())
        return np.stack(cols, axis=1)


class ArraySource:
    """Row-block reader for an in-memory matrix with class-major rows."""

    def __init__(self, matrix: np.ndarray, n_class: int, multiplicity=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.n_class = n_class
        self.n_dof = self.matrix.shape[0] // n_class
        if self.n_dof * n_class != self.matrix.shape[0]:
            raise ValueError("row count is not a multiple of the class count")
        self.multiplicity = np.ones(n_class, int) if multiplicity is None else np.asarray(multiplicity)
        self.n_cols = self.matrix.shape[1]

    def block(self, u0, u1) -> np.ndarray:
        return self.matrix[u0 * self.n_dof:u1 * self.n_dof]


def collect_snapshots(problem, mesh, space, quad, train_mus, window: int, eps_train: float,
                      directory, fold_z: bool = False, max_iter: int = 2000) -> SnapshotStore:
    """Run SI-DSA per training parameter and write solution and early-iterate
    snapshots. Non-converged parameters are skipped with a warning."""
    if window < 1:
        raise ValueError("window must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("snap_*.bin"):
        old.unlink()
    store = None
    cfg = SolveConfig(eps_sisa=eps_train, max_iter=max_iter)
    for mu in train_mus:
        system = assemble(problem, mesh, space, quad, mu, fold_z=fold_z)
        if store is None:
            store = SnapshotStore(directory, mesh.geometry, system.classes.n, system.n_dof,
                                  system.classes.multiplicity, window, eps_train)
        dsa = build_dsa(system)
        f, kept, n_conv = solve_f_form(system, dsa, cfg, window)
        if n_conv == 0:
            log.warning("training solve for mu=%s did not converge; excluded", mu)
            continue
        store.add(mu, f, kept, n_conv)
    if store is None or not store.mus:
        raise RuntimeError("no training parameter converged")
    return store


# --------------------------------------------------------------------------
# POD


def truncation_rank(singular_values, eps_pod: float) -> int:
    """Smallest ``r`` with ``sum_{k<=r} s_k / sum_k s_k >= 1 - eps_pod``."""
    s = np.asarray(singular_values, dtype=float)
    total = s.sum()
    if not total > 0:
        raise ValueError("snapshot matrix is zero")
    frac = np.cumsum(s) / total
    r = int(np.searchsorted(frac, 1.0 - eps_pod, side="left")) + 1
    return min(r, s.size)


def pod_truncate(F: np.ndarray, eps_pod: float):
    """In-memory POD: ``(U_r, singular values, r)``."""
    F = np.asarray(F, dtype=float)
    if not np.any(F):
        raise ValueError("snapshot matrix is zero")
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    r = truncation_rank(s, eps_pod)
    return U[:, :r], s, r


def _chunks(n_class, n_dof, n_cols, chunk_rows):
    per = max(1, int(np.ceil(chunk_rows / n_dof)), int(np.ceil(n_cols / n_dof)))
    out = []
    u = 0
    while u < n_class:
        out.append((u, min(n_class, u + per)))
        u += per
    # the last chunk must also be tall enough
    if len(out) > 1 and (out[-1][1] - out[-1][0]) * n_dof < n_cols:
        a, _ = out.pop()
        out[-1] = (out[-1][0], n_class)
    return out


def _tsqr(source, chunks):
    Rs = []
    for u0, u1 in chunks:
        _, R = np.linalg.qr(source.block(u0, u1), mode="reduced")
        Rs.append(R)
    sizes = [R.shape[0] for R in Rs]
    Q2, R2 = np.linalg.qr(np.vstack(Rs), mode="reduced")
    Ur, s, _ = np.linalg.svd(R2)
    return sizes, Q2, Ur, s


# --------------------------------------------------------------------------
# reduced model


@dataclass
class ReducedModel:
    """Projected affine operators and aggregated bases of one POD space."""

    kind: str
    geometry: str
    n_v: int
    n_dof: int
    names: list
    basis_rho: np.ndarray  # (n_dof, r)
    basis_iso: np.ndarray  # (n_dof, r)
    operators: np.ndarray  # (k_affine, r, r)
    rhs_bc: np.ndarray  # (r,) projected inflow vector
    singular_values: np.ndarray
    eps_pod: float
    timings: dict = field(default_factory=dict)
    basis: np.ndarray | None = None  # full class-ordered basis, kept only on request

    _MAGIC = b"RTEROM1"

    @property
    def r(self) -> int:
        return self.basis_rho.shape[1]

    @property
    def discarded_fraction(self) -> float:
        s = self.singular_values
        return float(s[self.r:].sum() / s.sum())

    def reduced_matrix(self, psi) -> np.ndarray:
        return np.tensordot(np.asarray(psi, dtype=float), self.operators, axes=(0, 0))

    def factor(self, system: TransportSystem):
        if list(system.component_names()) != list(self.names):
            raise ValueError(f"affine components {system.component_names()} do not match model {self.names}")
        A = self.reduced_matrix(system.component_psi())
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e14:
            raise RomSingularError(
                f"reduced {self.kind} matrix is singular (cond={cond:.2e}); "
                "use a larger eps_pod or a richer training set"
            )
        return lu_factor(A)

    # persistence -------------------------------------------------------
    def save(self, path) -> None:
        """Binary container, little endian, column-major blocks."""
        r, k = self.r, self.operators.shape[0]
        with open(path, "wb") as fh:
            _write_header(fh, self._MAGIC, (FORMAT_VERSION, _GEOM_TAG[self.geometry], self.n_v,
                                            self.n_dof, r, k, self.singular_values.size))
            meta = "\n".join([self.kind, repr(float(self.eps_pod))] + list(self.names)).encode()
            fh.write(struct.pack("<Q", len(meta)))
            fh.write(meta)
            for a in (self.basis_rho, self.basis_iso, *self.operators):
                fh.write(np.asfortranarray(a, dtype="<f8").tobytes(order="F"))
            fh.write(np.asarray(self.rhs_bc, dtype="<f8").tobytes())
            fh.write(np.asarray(self.singular_values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ReducedModel":
        with open(path, "rb") as fh:
            ver, tag, nv, nd, r, k, ns = _read_header(fh, cls._MAGIC, 7)
            if ver != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported version {ver}")
            (nmeta,) = struct.unpack("<Q", fh.read(8))
            meta = fh.read(nmeta).decode().split("\n")

            def mat(rows, cols):
                a = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8")
                return a.reshape((rows, cols), order="F").copy()

            rho = mat(nd, r)
            iso = mat(nd, r)
            ops = np.stack([mat(r, r) for _ in range(k)]) if k else np.zeros((0, r, r))
            rhs = np.frombuffer(fh.read(8 * r), dtype="<f8").copy()
            s = np.frombuffer(fh.read(8 * ns), dtype="<f8").copy()
        return cls(meta[0], _TAG_GEOM[tag], nv, nd, meta[2:], rho, iso, ops, rhs, s, float(meta[1]))


def build_reduced_model(source, system: TransportSystem, eps_pod: float, kind: str = "solution",
                        chunk_rows: int = 1 << 17, keep_basis: bool = False) -> ReducedModel:
    """POD basis of ``source`` and the projected affine operators of ``system``.

    Parameters
    ----------
    source : SnapshotStore source, ArraySource or ndarray
        Class-major snapshot rows, already scaled by ``sqrt(multiplicity)``.
    system : TransportSystem
        Any parameter value; only its affine components and inflow are used.
    """
    if not system.terms:
        raise ValueError("reduced models need an affine decomposition of the cross sections")
    cls = system.classes
    if isinstance(source, np.ndarray):
        source = ArraySource(source, cls.n, cls.multiplicity)
    if source.n_class != cls.n or source.n_dof != system.n_dof:
        raise ValueError("snapshots do not match the transport system layout")
    t0 = time.perf_counter()
    chunks = _chunks(cls.n, system.n_dof, source.n_cols, chunk_rows)
    sizes, Q2, Ur, s = _tsqr(source, chunks)
    if not s[0] > 0:
        raise ValueError("snapshot matrix is zero")
    r = truncation_rank(s, eps_pod)
    Ur = Ur[:, :r]
    t_svd = time.perf_counter() - t0

    n, nt = system.n_dof, len(system.terms)
    rho = np.zeros((n, r))
    iso = np.zeros((n, r))
    ops = np.zeros((nt + 1, r, r))
    rhs_bc = np.zeros(r)
    gram = np.zeros((r, r))
    full = np.empty((cls.n, n, r)) if keep_basis else None
    t_ops = 0.0
    off = 0
    for (u0, u1), sz in zip(chunks, sizes):
        Q, _ = np.linalg.qr(source.block(u0, u1), mode="reduced")
        Ub = (Q @ (Q2[off:off + sz] @ Ur)).reshape(u1 - u0, n, r)
        off += sz
        t1 = time.perf_counter()
        for i, u in enumerate(range(u0, u1)):
            Uu = Ub[i]
            m = cls.multiplicity[u]
            gram += Uu.T @ Uu
            rho += (cls.weight[u] / np.sqrt(m)) * Uu
            iso += np.sqrt(m) * Uu
            rhs_bc += np.sqrt(m) * (Uu.T @ system.inflow[u])
            ops[0] += Uu.T @ (system.streaming_matrix(cls.velocity[u]) @ Uu)
            for k, (_, _, total, _) in enumerate(system.terms, start=1):
                ops[k] += Uu.T @ system.apply_blocks(total, Uu)
            if full is not None:
                full[u] = Uu
        t_ops += time.perf_counter() - t1
    t1 = time.perf_counter()
    for k, (_, _, _, scat) in enumerate(system.terms, start=1):
        ops[k] -= iso.T @ system.apply_blocks(scat, rho)
    t_ops += time.perf_counter() - t1
    err = np.abs(gram - np.eye(r)).max()
    if err > 1e-10:
        raise RuntimeError(f"POD basis lost orthonormality ({err:.2e})")
    model = ReducedModel(kind, system.mesh.geometry, cls.n, n, system.component_names(), rho, iso,
                         ops, rhs_bc, s, eps_pod, {"basis": t_svd, "operators": t_ops},
                         None if full is None else full.reshape(cls.n * n, r))
    log.info("%s model: r=%d of %d columns (basis %.2fs, operators %.2fs)", kind, r, s.size, t_svd, t_ops)
    return model


# --------------------------------------------------------------------------
# online


def romig(model: ReducedModel, system: TransportSystem, return_coefficients: bool = False):
    """Reduced-order initial density ``U^rho c`` with ``A_r c = (U^iso)^T G + U^T g``."""
    lu = model.factor(system)
    c = lu_solve(lu, model.basis_iso.T @ system.source + model.rhs_bc)
    rho0 = model.basis_rho @ c
    return (rho0, c) if return_coefficients else rho0


class RomsaCorrection(CorrectionStrategy):
    """Correction from the reduced kinetic correction equation."""

    def __init__(self, model: ReducedModel, window: int | None = None):
        if model.kind != "correction":
            raise ValueError("ROMSA needs a correction-equation model")
        self.model = model
        self.label = "ROMSA" if window is None else f"ROMSA-{window}"

    def setup(self, system):
        super().setup(system)
        self._lu = self.model.factor(system)

    def correct(self, l, delta_rho):
        rhs = self.model.basis_iso.T @ self.system.scatter(delta_rho)
        return self.model.basis_rho @ lu_solve(self._lu, rhs)


def romsad_threshold(eps_train: float, eps_pod: float, eta: float = 0.1) -> float:
    return eta * max(eps_train, eps_pod)


class RomsadCorrection(CorrectionStrategy):
    """ROMSA for iterations ``l <= theta`` while ``||delta_rho|| >= eps_switch``,
    DSA afterwards. The switch is one way; the diffusion system is only
    factored if the switch happens."""

    def __init__(self, model: ReducedModel, theta: int, eps_switch: float,
                 dsa: DsaOperator | None = None, window: int | None = None):
        if theta < 0:
            raise ValueError("theta must be >= 0")
        self.romsa = RomsaCorrection(model, window)
        self.theta = theta
        self.eps_switch = eps_switch
        self.dsa = dsa
        self.label = f"ROMSAD-{window if window is not None else ''},{theta}"
        self.choices = []

    def setup(self, system):
        super().setup(system)
        if self.dsa is not None and self.dsa.n_dof != system.n_dof:
            self.dsa = None
        try:
            self.romsa.setup(system)
            self._rom_active = True
        except RomSingularError as exc:
            log.warning("ROMSA unavailable, using DSA: %s", exc)
            self._rom_active = False
        self.choices = []

    def use_rom(self, l: int, change: float) -> bool:
        return self._rom_active and l <= self.theta and change >= self.eps_switch

    def correct(self, l, delta_rho):
        if self.use_rom(l, float(np.abs(delta_rho).max())):
            self.choices.append("ROMSA")
            return self.romsa.correct(l, delta_rho)
        self._rom_active = False
        self.choices.append("DSA")
        if self.dsa is None:
            self.dsa = build_dsa(self.system)
        return dsa_correct(self.dsa, self.system, delta_rho)


def romsad_strategy(model: ReducedModel, dsa: DsaOperator | None, theta: int, eps_switch: float,
                    window: int | None = None) -> RomsadCorrection:
    return RomsadCorrection(model, theta, eps_switch, dsa, window)
