"""hp approximation of functions singular at 0: geometric mesh, interpolation, PSENet."""

from __future__ import annotations

import math

import numpy as np

from ..models import OneHiddenPse
from .piecewise import PiecewisePoly, piecewise_poly_to_pse


def hp_geometric_mesh(n_elements: int, mu: float = 1.0, delta: float = 1.0) -> tuple[np.ndarray, tuple]:
    """Knots ``0, 2^-(n-1), ..., 1/2, 1`` and degrees ``1, floor(mu i^delta), ...``.

    Degrees are clamped to be non-decreasing and at least 1.
    """
    if n_elements < 1:
        raise ValueError(f"hp_geometric_mesh: need at least one element, got {n_elements}")
    if mu <= 0 or delta < 1:
        raise ValueError(f"hp_geometric_mesh: need mu > 0 and delta >= 1, got mu={mu}, delta={delta}")
    n = n_elements
    mesh = np.array([0.0] + [2.0 ** -(n - i) for i in range(1, n + 1)])
    degrees = [1]
    for i in range(2, n + 1):
        degrees.append(max(degrees[-1], math.floor(mu * i**delta), 1))
    return mesh, tuple(degrees)


def lobatto_nodes(p: int) -> np.ndarray:
    """``p + 1`` Chebyshev-Lobatto points on ``[0, 1]`` including both ends."""
    s = 0.5 * (1.0 - np.cos(np.pi * np.arange(p + 1) / p))
    s[0], s[-1] = 0.0, 1.0
    return s


def hp_interpolate(f, mesh, degrees) -> PiecewisePoly:
    """Per-element polynomial interpolation of ``f`` at Chebyshev-Lobatto nodes.

    Element endpoints are always nodes, so the result is continuous and
    matches ``f`` at every knot.
    """
    mesh = np.asarray(mesh, dtype=np.float64)
    coeffs = []
    for i, p in enumerate(degrees):
        if p < 1:
            raise ValueError(f"hp_interpolate: element {i} has degree {p}; degree 0 is not allowed")
        lo, hi = mesh[i], mesh[i + 1]
        h = hi - lo
        s = lobatto_nodes(p)
        x = lo + h * s
        x[-1] = hi
        y = np.asarray(f(x), dtype=np.float64)
        c = np.linalg.solve(np.vander(s, p + 1, increasing=True), y)
        # Pin the ends so neighbouring pieces agree to rounding.
        c[0] = y[0]
        coeffs.append(c / h ** np.arange(p + 1))
    return PiecewisePoly(mesh, coeffs, tuple(degrees))


def singular_to_pse(f, n_elements: int, mu: float = 1.0, delta: float = 1.0) -> OneHiddenPse:
    """One-hidden-layer PSENet equal to the hp interpolant of ``f`` on [0, 1]."""
    mesh, degrees = hp_geometric_mesh(n_elements, mu, delta)
    return piecewise_poly_to_pse(hp_interpolate(f, mesh, degrees))
