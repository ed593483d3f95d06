"""Cardinal B-splines written as ReLU^n combinations, and their PSENet embedding."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..models import OneHiddenPse


def bspline_weights(n: int) -> np.ndarray:
    """``w_i = prod_{j != i} 1 / (i - j)`` for ``i, j`` in ``0..n+1``."""
    if n < 0:
        raise ValueError(f"bspline_weights: degree must be >= 0, got {n}")
    w = []
    for i in range(n + 2):
        p = Fraction(1)
        for j in range(n + 2):
            if j != i:
                p /= i - j
        w.append(float(p))
    return np.array(w)


def bspline_eval(n: int, x) -> np.ndarray:
    """Cardinal B-spline of degree ``n`` supported on ``[0, n+1]``.

    Evaluates ``(n+1) * sum_i w_i * relu(i - x)**n``. Outside the open
    support the truncated powers cancel only up to rounding, so the result
    is set to exactly 0 there (``b^n`` vanishes at both ends for ``n >= 1``).
    """
    if n < 1:
        raise ValueError(f"bspline_eval: degree must be >= 1, got {n}")
    x = np.asarray(x, dtype=np.float64)
    w = bspline_weights(n)
    i = np.arange(n + 2, dtype=np.float64)
    terms = np.maximum(i - x[..., None], 0.0) ** n
    val = (n + 1) * (terms @ w)
    return np.where((x <= 0) | (x >= n + 1), 0.0, val)


@dataclass
class BsplineSeries:
    """``v(x) = sum_{j=-n}^{k} c_j b^n(x/h - j)`` with ``h = 1/(k+1)``."""

    n: int
    k: int
    c: np.ndarray  # length k + n + 1, c[0] is c_{-n}

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.n < 1 or self.k < 0:
            raise ValueError(f"BsplineSeries: need n >= 1 and k >= 0, got n={self.n}, k={self.k}")
        if self.c.shape != (self.k + self.n + 1,):
            raise ValueError(
                f"BsplineSeries: expected {self.k + self.n + 1} coefficients (j=-n..k), got {self.c.shape}"
            )

    @property
    def h(self) -> float:
        return 1.0 / (self.k + 1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t = x * (self.k + 1)
        out = np.zeros_like(x)
        for idx, j in enumerate(range(-self.n, self.k + 1)):
            out = out + self.c[idx] * bspline_eval(self.n, t - j)
        return out


def bspline_series_to_pse(s: BsplineSeries) -> OneHiddenPse:
    """Exact one-hidden-layer PSENet for ``s`` on ``[0, 1]``.

    Each shifted spline expands to ``relu^n(l - x/h)`` terms with
    ``l = i + j``; terms sharing a kink are merged into one neuron. Kinks at
    ``l <= 0`` vanish on ``[0, 1]`` and are dropped, leaving ``k + n + 1``
    neurons in the degree-``n`` branch.
    """
    n, k = s.n, s.k
    scaled = (n + 1) * bspline_weights(n)
    kinks = np.arange(1, k + n + 2)
    alpha = np.zeros(len(kinks))
    for idx, j in enumerate(range(-n, k + 1)):
        for i in range(n + 2):
            ell = i + j
            if ell >= 1:
                alpha[ell - 1] += s.c[idx] * scaled[i]
    W = [np.zeros((1, 1))] + [np.zeros((0, 1)) for _ in range(n)]
    b = [np.zeros(1)] + [np.zeros(0) for _ in range(n)]
    a = [np.zeros(1)] + [np.zeros(0) for _ in range(n)]
    W[n] = np.full((len(kinks), 1), -float(k + 1))
    b[n] = kinks.astype(np.float64)
    a[n] = alpha
    return OneHiddenPse(n, W, b, a)

