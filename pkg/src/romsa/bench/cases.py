"""The six parametric benchmark problems and their solver settings."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..mesh import Mesh, rect_mesh, slab_mesh
from ..problem import AffineTerm, ProblemDefinition
from ..quadrature import AngularQuadrature, chebyshev_legendre, gauss_legendre

__all__ = ["BenchmarkCase", "CASE_IDS", "define_case", "LATTICE_MAP"]

CASE_IDS = ("cross_regime", "two_material", "homogeneous", "lattice", "pin_cell", "variable_scattering")

# 5x5 unit blocks on [0,5]^2, row 0 at the bottom: A = absorber, S = scatterer,
# C = scatterer carrying the unit source.
LATTICE_MAP = (
    "ASASA",
    "SASAS",
    "ASCSA",
    "SASAS",
    "ASASA",
)

_SCALES = {"full": 1.0, "reduced": 0.5, "half": 0.5}


@dataclass
class BenchmarkCase:
    """Problem, discretization and solver settings of one benchmark.

    ``methods`` lists online method labels, e.g. ``"ROMSAD-3,5"``.
    """

    case_id: str
    problem: ProblemDefinition
    mesh_spec: dict
    quad_spec: tuple
    eps_sisa: float
    eps_pod: float
    gmres_rel_tol: float
    train_mus: np.ndarray
    n_test: int
    seed: int
    window: int
    theta: int
    eta: float = 0.1
    scale: float = 1.0
    methods: tuple = ()
    fold_z: bool = True
    extra: dict = field(default_factory=dict)

    def mesh(self) -> Mesh:
        spec = self.mesh_spec
        if spec["kind"] == "slab":
            return slab_mesh(spec["edges"])
        return rect_mesh(*spec["box"], spec["nx"], spec["ny"])

    def quadrature(self) -> AngularQuadrature:
        if self.quad_spec[0] == "GL":
            return gauss_legendre(self.quad_spec[1])
        return chebyshev_legendre(self.quad_spec[1], self.quad_spec[2])

    def test_mus(self) -> np.ndarray:
        """Uniform pseudo-random test parameters, disjoint from the training set."""
        rng = np.random.default_rng(self.seed)
        lo = np.array([r[0] for r in self.problem.param_ranges])
        hi = np.array([r[1] for r in self.problem.param_ranges])
        out = []
        while len(out) < self.n_test:
            mu = lo + (hi - lo) * rng.random(lo.size)
            if np.min(np.abs(self.train_mus - mu).max(axis=1)) > 1e-12:
                out.append(mu)
        return np.array(out)

    def max_window(self) -> int:
        ws = [self.window]
        for m in self.methods:
            if m.startswith("ROMSA"):
                ws.append(int(m.split("-")[1].split(",")[0]))
        return max(ws)


def _grid(*axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _scaled_cells(n, scale):
    return max(2, int(round(n * scale)))


def _scaled_cl(n_phi, n_vz, scale):
    """Scale both CL factors, keeping even counts so antipodes exist."""
    if scale == 1.0:
        return ("CL", n_phi, n_vz)
    return ("CL", 2 * int(math.ceil(n_phi * scale / 2.0)), max(2, 2 * int(math.ceil(n_vz * scale / 2.0))))


def _gauss_bump(scale, width, cx=0.0, cy=0.0):
    def g(x, y):
        return scale * np.exp(-width * ((x - cx) ** 2 + (y - cy) ** 2))

    return g


def _cross_regime(scale):
    n = _scaled_cells(400, scale)
    prob = ProblemDefinition(
        "cross_regime", "slab1d",
        sigma_a=lambda mu, x: np.zeros_like(x),
        sigma_s=lambda mu, x: 0.1 + mu[0] * x,
        source=lambda x: np.full_like(x, 0.01),
        param_names=("mu_s",), param_ranges=((10.0, 20.0),),
        affine=(
            AffineTerm("background", lambda mu: 1.0, sigma_s=lambda x: np.full_like(x, 0.1)),
            AffineTerm("slope", lambda mu: mu[0], sigma_s=lambda x: x),
        ),
    )
    return BenchmarkCase(
        "cross_regime", prob, {"kind": "slab", "edges": np.linspace(0.0, 10.0, n + 1)}, ("GL", 16),
        eps_sisa=1e-11, eps_pod=1e-11, gmres_rel_tol=1e-11,
        train_mus=(10.0 + 0.25 * np.arange(41))[:, None], n_test=20, seed=20240101,
        window=3, theta=3, scale=scale,
        methods=("DSA", "ROMIG", "ROMSA-1", "ROMSAD-1,3", "ROMSA-3", "ROMSAD-3,3"),
    )


def _two_material(scale):
    n1, n2 = _scaled_cells(100, scale), _scaled_cells(100, scale)
    edges = np.concatenate([np.linspace(0.0, 1.0, n1 + 1), np.linspace(1.0, 11.0, n2 + 1)[1:]])

    def absorber(x):
        return (x <= 1.0).astype(float)

    prob = ProblemDefinition(
        "two_material", "slab1d",
        sigma_a=lambda mu, x: mu[0] * absorber(x),
        sigma_s=lambda mu, x: mu[1] * (1.0 - absorber(x)),
        inflow={"left": 5.0},
        param_names=("mu_a", "mu_s"), param_ranges=((0.5, 1.5), (10.0, 50.0)),
        affine=(
            AffineTerm("absorber", lambda mu: mu[0], sigma_a=absorber),
            AffineTerm("scatterer", lambda mu: mu[1], sigma_s=lambda x: 1.0 - absorber(x)),
        ),
    )
    return BenchmarkCase(
        "two_material", prob, {"kind": "slab", "edges": edges}, ("GL", 16),
        eps_sisa=1e-12, eps_pod=1e-10, gmres_rel_tol=1e-12,
        train_mus=_grid(0.5 + 0.1 * np.arange(11), 10.0 + np.arange(41)), n_test=20, seed=20240102,
        window=3, theta=3, scale=scale,
        methods=("DSA", "ROMIG", "ROMSAD-3,3", "ROMSAD-5,3"),
    )


def _homogeneous(scale):
    n = _scaled_cells(80, scale)
    prob = ProblemDefinition(
        "homogeneous", "xy2d",
        sigma_a=lambda mu, x, y: np.zeros_like(x),
        sigma_s=lambda mu, x, y: np.full_like(x, mu[0]),
        source=_gauss_bump(1.0, 100.0, 0.5, 0.5),
        param_names=("mu_s",), param_ranges=((0.9, 1.1),),
        affine=(AffineTerm("scatterer", lambda mu: mu[0], sigma_s=lambda x, y: np.ones_like(x)),),
    )
    return BenchmarkCase(
        "homogeneous", prob, {"kind": "rect", "box": (0.0, 1.0, 0.0, 1.0), "nx": n, "ny": n},
        _scaled_cl(30, 6, scale),
        eps_sisa=1e-12, eps_pod=1e-9, gmres_rel_tol=1e-11,
        train_mus=(0.9 + 0.01 * np.arange(21))[:, None], n_test=10, seed=20240103,
        window=3, theta=3, scale=scale,
        methods=("DSA", "ROMIG", "ROMSA-3", "ROMSAD-3,3", "PGMRES", "PGMRES-ROMIG"),
    )


def _lattice_kind(x, y):
    """Per-point block type from :data:`LATTICE_MAP`."""
    ix = np.clip(np.floor(x).astype(int), 0, 4)
    iy = np.clip(np.floor(y).astype(int), 0, 4)
    table = np.array([[c for c in row] for row in LATTICE_MAP])
    return table[iy, ix]


def _lattice(scale):
    n = _scaled_cells(50, scale)

    def absorber(x, y):
        return (_lattice_kind(x, y) == "A").astype(float)

    def source(x, y):
        return ((np.abs(x - 2.5) < 0.5) & (np.abs(y - 2.5) < 0.5)).astype(float)

    prob = ProblemDefinition(
        "lattice", "xy2d",
        sigma_a=lambda mu, x, y: mu[0] * absorber(x, y),
        sigma_s=lambda mu, x, y: mu[1] * (1.0 - absorber(x, y)),
        source=source,
        param_names=("mu_a", "mu_s"), param_ranges=((95.0, 105.0), (0.5, 1.5)),
        affine=(
            AffineTerm("absorber", lambda mu: mu[0], sigma_a=absorber),
            AffineTerm("scatterer", lambda mu: mu[1], sigma_s=lambda x, y: 1.0 - absorber(x, y)),
        ),
    )
    return BenchmarkCase(
        "lattice", prob, {"kind": "rect", "box": (0.0, 5.0, 0.0, 5.0), "nx": n, "ny": n},
        _scaled_cl(40, 6, scale),
        eps_sisa=1e-12, eps_pod=1e-11, gmres_rel_tol=1e-12,
        train_mus=_grid(95.0 + np.arange(11), 0.5 + 0.1 * np.arange(11)), n_test=10, seed=20240104,
        window=3, theta=5, scale=scale,
        methods=("DSA", "ROMIG", "ROMSAD-3,5", "PGMRES", "PGMRES-ROMIG"),
    )


def _pin_cell(scale):
    n = _scaled_cells(80, scale)

    def inner(x, y):
        return ((np.abs(x) <= 0.5) & (np.abs(y) <= 0.5)).astype(float)

    prob = ProblemDefinition(
        "pin_cell", "xy2d",
        sigma_a=lambda mu, x, y: mu[0] * inner(x, y),
        sigma_s=lambda mu, x, y: mu[1] * inner(x, y) + 100.0 * (1.0 - inner(x, y)),
        source=_gauss_bump(1.0, 100.0),
        param_names=("mu_a", "mu_s"), param_ranges=((0.05, 0.5), (0.05, 0.5)),
        affine=(
            AffineTerm("outer", lambda mu: 1.0, sigma_s=lambda x, y: 100.0 * (1.0 - inner(x, y))),
            AffineTerm("inner_absorption", lambda mu: mu[0], sigma_a=inner),
            AffineTerm("inner_scattering", lambda mu: mu[1], sigma_s=inner),
        ),
    )
    return BenchmarkCase(
        "pin_cell", prob, {"kind": "rect", "box": (-1.0, 1.0, -1.0, 1.0), "nx": n, "ny": n},
        _scaled_cl(30, 6, scale),
        eps_sisa=1e-11, eps_pod=1e-9, gmres_rel_tol=2.5e-11,
        train_mus=_grid(0.05 + 0.1125 * np.arange(5), 0.05 + 0.1125 * np.arange(5)), n_test=10, seed=20240105,
        window=3, theta=5, scale=scale,
        methods=("DSA", "ROMIG", "ROMSAD-3,5", "PGMRES", "PGMRES-ROMIG"),
    )


def _variable_scattering(scale):
    n = _scaled_cells(80, scale)

    def shape(x, y):
        r2 = x * x + y * y
        return np.where(r2 <= 1.0, r2 * r2 * (2.0 - r2) ** 2, 1.0)

    prob = ProblemDefinition(
        "variable_scattering", "xy2d",
        sigma_a=lambda mu, x, y: np.zeros_like(x),
        sigma_s=lambda mu, x, y: mu[0] * shape(x, y) + 0.1,
        source=_gauss_bump(10.0 / np.pi, 100.0),
        param_names=("mu_s",), param_ranges=((49.9, 99.9),),
        affine=(
            AffineTerm("background", lambda mu: 1.0, sigma_s=lambda x, y: np.full_like(x, 0.1)),
            AffineTerm("profile", lambda mu: mu[0], sigma_s=shape),
        ),
    )
    return BenchmarkCase(
        "variable_scattering", prob, {"kind": "rect", "box": (-1.0, 1.0, -1.0, 1.0), "nx": n, "ny": n},
        _scaled_cl(30, 6, scale),
        eps_sisa=1e-12, eps_pod=1e-11, gmres_rel_tol=2.5e-11,
        train_mus=np.linspace(49.9, 99.9, 50)[:, None], n_test=10, seed=20240106,
        window=3, theta=5, scale=scale,
        methods=("DSA", "ROMIG", "ROMSAD-3,5", "PGMRES", "PGMRES-ROMIG"),
    )


_BUILDERS = {
    "cross_regime": _cross_regime,
    "two_material": _two_material,
    "homogeneous": _homogeneous,
    "lattice": _lattice,
    "pin_cell": _pin_cell,
    "variable_scattering": _variable_scattering,
}


def define_case(case_id: str, scale="full") -> BenchmarkCase:
    """Instantiate a benchmark at ``scale`` ("full", "reduced"/"half", or a factor in (0, 1])."""
    if case_id not in _BUILDERS:
        raise ValueError(f"unknown case {case_id!r}; choose from {', '.join(CASE_IDS)}")
    if isinstance(scale, str) and scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}; use full, reduced, half or a factor")
    s = _SCALES[scale] if isinstance(scale, str) else float(scale)
    if not 0.0 < s <= 1.0:
        raise ValueError(f"scale must lie in (0, 1], got {scale!r}")
    case = _BUILDERS[case_id](s)
    for mu in case.train_mus:
        case.problem.check_mu(mu)
    return case
