"""Continuous piecewise polynomials and their exact one-hidden-layer PSENet form."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..models import OneHiddenPse

CONTINUITY_TOL = 1e-12


def taylor_shift(c: np.ndarray, delta: float) -> np.ndarray:
    """Coefficients of ``q(s + delta)`` in powers of ``s`` given those of ``q(t)``."""
    c = np.asarray(c, dtype=np.float64)
    out = np.zeros_like(c)
    for k, ck in enumerate(c):
        for j in range(k + 1):
            out[j] += ck * math.comb(k, j) * delta ** (k - j)
    return out


def _horner(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for ck in c[::-1]:
        out = out * t + ck
    return out


def _horner_prime(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(c) < 2:
        return np.zeros_like(t)
    return _horner(c[1:] * np.arange(1, len(c)), t)


@dataclass
class PiecewisePoly:
    """Continuous piecewise polynomial on ``mesh``.

    ``coeffs[i]`` holds the coefficients of the piece on
    ``[mesh[i], mesh[i+1]]`` in powers of ``x - mesh[i]``; its length is
    ``degrees[i] + 1``.
    """

    mesh: np.ndarray
    coeffs: list
    degrees: tuple

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=np.float64)
        self.coeffs = [np.asarray(c, dtype=np.float64) for c in self.coeffs]
        self.degrees = tuple(int(p) for p in self.degrees)
        if np.any(np.diff(self.mesh) <= 0):
            raise ValueError("PiecewisePoly: mesh must be strictly increasing")
        n = len(self.mesh) - 1
        if len(self.coeffs) != n or len(self.degrees) != n:
            raise ValueError(f"PiecewisePoly: {n} elements but {len(self.coeffs)} pieces, {len(self.degrees)} degrees")
        for i, (c, p) in enumerate(zip(self.coeffs, self.degrees)):
            if len(c) != p + 1:
                raise ValueError(f"PiecewisePoly: element {i} has degree {p} but {len(c)} coefficients")
        gaps = self.continuity_gaps()
        for i, g in enumerate(gaps):
            scale = max(1.0, abs(self.piece_value(i, self.mesh[i + 1])))
            if g > CONTINUITY_TOL * scale:
                raise ValueError(f"PiecewisePoly: discontinuous at knot {i + 1} (jump {g:.3e})")

    @property
    def n_elements(self) -> int:
        return len(self.coeffs)

    def piece_value(self, i: int, x) -> np.ndarray:
        return _horner(self.coeffs[i], np.asarray(x, dtype=np.float64) - self.mesh[i])

    def continuity_gaps(self) -> np.ndarray:
        return np.array(
            [
                abs(float(self.piece_value(i, self.mesh[i + 1])) - float(self.coeffs[i + 1][0]))
                for i in range(self.n_elements - 1)
            ]
        )

    def _element(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.mesh, x, side="right") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        idx = self._element(x)
        out = np.empty_like(x)
        for i in range(self.n_elements):
            sel = idx == i
            out[sel] = _horner(self.coeffs[i], x[sel] - self.mesh[i])
        return out

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        idx = self._element(x)
        out = np.empty_like(x)
        for i in range(self.n_elements):
            sel = idx == i
            out[sel] = _horner_prime(self.coeffs[i], x[sel] - self.mesh[i])
        return out

    @classmethod
    def random(cls, mesh, degrees, rng: np.random.Generator) -> PiecewisePoly:
        """Random continuous piecewise polynomial (coefficients in [-1, 1])."""
        mesh = np.asarray(mesh, dtype=np.float64)
        coeffs = []
        for i, p in enumerate(degrees):
            c = rng.uniform(-1.0, 1.0, size=p + 1)
            if i:
                c[0] = _horner(coeffs[-1], mesh[i] - mesh[i - 1])
            coeffs.append(c)
        return cls(mesh, coeffs, tuple(degrees))


def piecewise_poly_to_pse(p: PiecewisePoly) -> OneHiddenPse:
    """Exact one-hidden-layer PSENet for ``p`` on ``[mesh[0], mesh[-1]]``.

    Element ``i`` contributes ``sum_j a_j relu^j(x - x_{i-1})`` where the
    ``a_j`` are the coefficients of ``p_i - p_{i-1}`` around ``x_{i-1}``;
    that difference vanishes at ``x_{i-1}`` by continuity. Degrees must be
    non-decreasing.
    """
    for i in range(1, p.n_elements):
        if p.degrees[i] < p.degrees[i - 1]:
            raise ValueError(
                f"piecewise_poly_to_pse: degrees must be non-decreasing, but degree[{i}]="
                f"{p.degrees[i]} < degree[{i - 1}]={p.degrees[i - 1]}"
            )
    top = max(p.degrees)
    units: list[list[tuple[float, float]]] = [[] for _ in range(top + 1)]
    for i in range(p.n_elements):
        knot = p.mesh[i]
        c = p.coeffs[i].copy()
        if i:
            prev = taylor_shift(p.coeffs[i - 1], knot - p.mesh[i - 1])
            c[: len(prev)] -= prev
        for j in range(1, len(c)):
            units[j].append((knot, c[j]))

    W = [np.zeros((1, 1))]
    b = [np.zeros(1)]
    alpha = [np.zeros(1)]
    for j in range(1, top + 1):
        knots = np.array([u[0] for u in units[j]], dtype=np.float64)
        W.append(np.ones((len(knots), 1)))
        b.append(-knots)
        alpha.append(np.array([u[1] for u in units[j]], dtype=np.float64))
    # Every kink sits at a knot >= mesh[0], so all units vanish there.
    return OneHiddenPse(top, W, b, alpha, np.float64(p.coeffs[0][0]))
