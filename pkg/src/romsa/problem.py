"""Parametric problem definitions: cross sections, source, inflow."""

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = ["AffineTerm", "ProblemDefinition"]


def _zero(*coords):
    return np.zeros_like(coords[0])


@dataclass(frozen=True)
class AffineTerm:
    """One term ``psi(mu) * (sigma_a field, sigma_s field)`` of an affine expansion.

    Fields are callables of the spatial coordinates only.
    """

    name: str
    psi: Callable[[np.ndarray], float]
    sigma_a: Callable | None = None
    sigma_s: Callable | None = None


@dataclass(frozen=True)
class ProblemDefinition:
    """Steady one-group RTE with isotropic scattering, source and inflow.

    ``sigma_a(mu, *coords)`` and ``sigma_s(mu, *coords)`` evaluate the cross
    sections at arrays of points. ``inflow`` maps a boundary side ("left",
    "right" and, in 2D, "bottom", "top") to a constant or a callable of the
    coordinates; missing sides have zero inflow. When ``affine`` is given,
    ``sum_k psi_k(mu) * field_k`` must reproduce the cross sections exactly.
    """

    name: str
    geometry: str
    sigma_a: Callable
    sigma_s: Callable
    source: Callable = _zero
    inflow: Mapping[str, object] = field(default_factory=dict)
    param_names: tuple = ()
    param_ranges: tuple = ()
    affine: tuple[AffineTerm, ...] | None = None

    def check_mu(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.shape != (len(self.param_names),):
            raise ValueError(f"{self.name}: expected {len(self.param_names)} parameters, got {mu.shape}")
        for v, (lo, hi), nm in zip(mu, self.param_ranges, self.param_names):
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise ValueError(f"{self.name}: {nm}={v} outside [{lo}, {hi}]")
        return mu

    def inflow_value(self, side: str, *coords):
        g = self.inflow.get(side, 0.0)
        if callable(g):
            return np.asarray(g(*coords), dtype=float)
        return np.full_like(coords[0], float(g), dtype=float)
