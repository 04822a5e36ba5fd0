"""Angular quadrature rules for discrete ordinates.

Weights are normalized to sum to one, so the scalar flux is the plain
weighted sum ``rho = sum_j w_j f_j``.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["AngularQuadrature", "gauss_legendre", "chebyshev_legendre"]

# direction components closer to zero than this are snapped to exactly zero
_SNAP = 1e-14


@dataclass(frozen=True, eq=False)
class AngularQuadrature:
    """Direction/weight set.

    Attributes
    ----------
    directions : ndarray, shape (n, 1) for slab or (n, 3) for X-Y geometry
    weights : ndarray, shape (n,)
    geometry : {"slab1d", "xy2d"}
    """

    directions: np.ndarray
    weights: np.ndarray
    geometry: str

    def __post_init__(self):
        if self.directions.shape[0] != self.weights.shape[0]:
            raise ValueError("directions and weights disagree in length")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def streaming(self) -> np.ndarray:
        """Components that enter the streaming operator: (n, 1) or (n, 2)."""
        if self.geometry == "slab1d":
            return self.directions
        return self.directions[:, :2]

    def moment(self, powers, positive_axis=None) -> float:
        """Return ``sum_j w_j prod_a v_{j,a}^p_a``.

        ``powers`` lists one exponent per streaming axis. When ``positive_axis``
        is given, only directions with a positive component on that axis count.
        Exponents may be given as ``"abs1"`` etc. to use ``|v|``.
        """
        v = self.streaming
        term = self.weights.copy()
        for a, p in enumerate(powers):
            if isinstance(p, str):
                term = term * np.abs(v[:, a]) ** int(p[3:])
            else:
                term = term * v[:, a] ** p
        if positive_axis is not None:
            term = term[v[:, positive_axis] > 0]
        return float(term.sum())

    def antipode(self) -> np.ndarray:
        """Index of the antipodal partner of every direction (-1 if absent)."""
        d = self.directions
        out = np.full(self.n, -1, dtype=np.int64)
        for j in range(self.n):
            hit = np.flatnonzero(np.all(np.abs(d + d[j]) < 1e-12, axis=1))
            if hit.size:
                out[j] = hit[0]
        return out


def gauss_legendre(n: int) -> AngularQuadrature:
    """Normalized n-point Gauss-Legendre rule on [-1, 1] (slab geometry).

    >>> q = gauss_legendre(2)
    >>> q.weights.tolist()
    [0.5, 0.5]
    """
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got n={n}")
    x, w = np.polynomial.legendre.leggauss(n)
    x = np.where(np.abs(x) < _SNAP, 0.0, x)
    # enforce exact antipodal symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.25 * (w + w[::-1])
    return AngularQuadrature(x[:, None], w, "slab1d")


def chebyshev_legendre(n_phi: int, n_vz: int) -> AngularQuadrature:
    """Chebyshev-Legendre product rule CL(n_phi, n_vz) on the unit sphere.

    Azimuths are ``2 j pi / n_phi - pi / n_phi`` with weight ``1 / n_phi``;
    the polar cosine uses the normalized Gauss-Legendre rule. Direction
    ``j = (j2 - 1) * n_phi + j1`` (1-based) pairs azimuth j1 with cosine j2.
    """
    if n_phi < 1 or n_vz < 1:
        raise ValueError("CL rule needs n_phi >= 1 and n_vz >= 1")
    j1 = np.arange(1, n_phi + 1)
    phi = 2.0 * j1 * np.pi / n_phi - np.pi / n_phi
    cphi = np.where(np.abs(np.cos(phi)) < _SNAP, 0.0, np.cos(phi))
    sphi = np.where(np.abs(np.sin(phi)) < _SNAP, 0.0, np.sin(phi))
    gl = gauss_legendre(n_vz)
    vz = gl.directions[:, 0]
    s = np.sqrt(1.0 - vz**2)
    dirs = np.empty((n_phi * n_vz, 3))
    w = np.empty(n_phi * n_vz)
    for j2 in range(n_vz):
        sl = slice(j2 * n_phi, (j2 + 1) * n_phi)
        dirs[sl, 0] = cphi * s[j2]
        dirs[sl, 1] = sphi * s[j2]
        dirs[sl, 2] = vz[j2]
        w[sl] = gl.weights[j2] / n_phi
    return AngularQuadrature(dirs, w, "xy2d")
