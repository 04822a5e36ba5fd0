"""Reduced-order acceleration of source iteration for S_N radiative transfer."""
