"""Exact constructions of PSENet functions from splines, polynomials and hp interpolants."""

from .bspline import BsplineSeries, bspline_eval, bspline_series_to_pse, bspline_weights
from .hp import hp_geometric_mesh, hp_interpolate, lobatto_nodes, singular_to_pse
from .lowering import lower_generalized, selector_alpha
from .piecewise import PiecewisePoly, piecewise_poly_to_pse, taylor_shift
from .polynomial import (
    Polynomial,
    SingularDirectionsError,
    exponents,
    monomial_pair,
    neuron_bound,
    polynomial_to_pse,
    ridge_matrix,
)

__all__ = [
    "BsplineSeries",
    "bspline_eval",
    "bspline_series_to_pse",
    "bspline_weights",
    "hp_geometric_mesh",
    "hp_interpolate",
    "lobatto_nodes",
    "singular_to_pse",
    "lower_generalized",
    "selector_alpha",
    "PiecewisePoly",
    "piecewise_poly_to_pse",
    "taylor_shift",
    "Polynomial",
    "SingularDirectionsError",
    "exponents",
    "monomial_pair",
    "neuron_bound",
    "polynomial_to_pse",
    "ridge_matrix",
]
