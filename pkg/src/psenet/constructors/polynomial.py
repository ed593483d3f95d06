"""Exact PSENet reproduction of multivariate polynomials.

A homogeneous degree-``i`` part is written as a combination of ridge powers
``(w_s . x)^i``, and each ridge power as the two-neuron identity
``t^i = relu^i(t) + (-1)^i relu^i(-t)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..models import OneHiddenPse

RCOND_MIN = 1e-12


class SingularDirectionsError(RuntimeError):
    """No well-conditioned set of ridge directions was found."""


def monomial_pair(i: int) -> tuple[float, float]:
    """Coefficients on ``relu^i(t)`` and ``relu^i(-t)`` summing to ``t^i``."""
    if i < 1:
        raise ValueError(f"monomial_pair: degree must be >= 1, got {i}")
    return 1.0, float((-1) ** i)


def exponents(d: int, i: int) -> list[tuple[int, ...]]:
    """All multi-indices of total degree ``i`` in ``d`` variables."""
    out = []
    for combo in itertools.combinations_with_replacement(range(d), i):
        a = [0] * d
        for k in combo:
            a[k] += 1
        out.append(tuple(a))
    return out


def multinomial(a: tuple[int, ...]) -> int:
    r = math.factorial(sum(a))
    for ak in a:
        r //= math.factorial(ak)
    return r


@dataclass
class Polynomial:
    """``p(x) = sum_a coeffs[a] * x**a`` on R^d."""

    d: int
    coeffs: dict  # multi-index tuple -> float

    def __post_init__(self):
        for a in self.coeffs:
            if len(a) != self.d or min(a, default=0) < 0:
                raise ValueError(f"Polynomial: bad multi-index {a} for d={self.d}")

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.coeffs), default=0)

    def homogeneous(self, i: int) -> dict:
        return {a: c for a, c in self.coeffs.items() if sum(a) == i}

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros(len(X))
        for a, c in self.coeffs.items():
            out += c * np.prod(X ** np.array(a), axis=1)
        return out

    @classmethod
    def random(cls, d: int, k: int, rng: np.random.Generator) -> Polynomial:
        coeffs = {}
        for i in range(k + 1):
            for a in exponents(d, i):
                coeffs[a] = float(rng.uniform(-1.0, 1.0))
        return cls(d, coeffs)


def ridge_matrix(directions: np.ndarray, i: int) -> np.ndarray:
    """Row ``s`` holds the monomial coefficients of ``(w_s . x)^i``."""
    d = directions.shape[1]
    A = exponents(d, i)
    M = np.empty((len(directions), len(A)))
    for col, a in enumerate(A):
        M[:, col] = multinomial(a) * np.prod(directions ** np.array(a), axis=1)
    return M


def lattice_directions(d: int, i: int) -> np.ndarray:
    """Principal-lattice points ``a / i`` of the unit simplex, one per monomial."""
    return np.array(exponents(d, i), dtype=np.float64) / i


def _ridge_weights(d: int, i: int, target: np.ndarray, max_resample: int, seed: int):
    """Directions ``w_s`` and weights ``lam`` with ``sum_s lam_s (w_s.x)^i`` = target."""
    W = lattice_directions(d, i)
    rng = np.random.default_rng(seed)
    for _ in range(max_resample + 1):
        M = ridge_matrix(W, i)
        if 1.0 / np.linalg.cond(M) >= RCOND_MIN:
            return W, np.linalg.solve(M.T, target)
        W = rng.standard_normal(W.shape)
        W /= np.linalg.norm(W, axis=1, keepdims=True)
    raise SingularDirectionsError(
        f"no well-conditioned ridge directions for degree {i} in {d} variables "
        f"after {max_resample} resamples"
    )


def polynomial_to_pse(p: Polynomial, *, max_resample: int = 10, seed: int = 0) -> OneHiddenPse:
    """One-hidden-layer PSENet equal to ``p`` on all of R^d.

    The constant goes into the output bias and the linear part into a single
    affine unit (omitted when there is none); each degree ``i >= 2`` uses
    ``2 * C(i+d-1, i)`` neurons of power ``i``.
    """
    d, k = p.d, p.degree
    n = max(k, 1)
    W = [np.zeros((0, d)) for _ in range(n + 1)]
    b = [np.zeros(0) for _ in range(n + 1)]
    alpha = [np.zeros(0) for _ in range(n + 1)]

    linear = p.homogeneous(1)
    if any(linear.values()):
        W[0], b[0], alpha[0] = np.zeros((1, d)), np.zeros(1), np.ones(1)
        for a, c in linear.items():
            W[0][0, a.index(1)] += c

    for i in range(2, k + 1):
        part = p.homogeneous(i)
        if not part:
            continue
        target = np.array([part.get(a, 0.0) for a in exponents(d, i)])
        dirs, lam = _ridge_weights(d, i, target, max_resample, seed)
        pos, neg = monomial_pair(i)
        W[i] = np.concatenate([dirs, -dirs])
        b[i] = np.zeros(2 * len(dirs))
        alpha[i] = np.concatenate([pos * lam, neg * lam])
    return OneHiddenPse(n, W, b, alpha, np.float64(p.coeffs.get((0,) * d, 0.0)))


def neuron_bound(d: int, k: int) -> int:
    """``2 * C(k+d, k)`` neurons suffice for degree ``k`` in ``d`` variables."""
    return 2 * math.comb(k + d, k)
