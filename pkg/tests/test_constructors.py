import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psenet.checks import random_generalized
from psenet.constructors import (
    BsplineSeries,
    PiecewisePoly,
    Polynomial,
    SingularDirectionsError,
    bspline_eval,
    bspline_series_to_pse,
    bspline_weights,
    exponents,
    hp_geometric_mesh,
    hp_interpolate,
    lobatto_nodes,
    lower_generalized,
    monomial_pair,
    neuron_bound,
    piecewise_poly_to_pse,
    polynomial_to_pse,
    ridge_matrix,
    selector_alpha,
    singular_to_pse,
    taylor_shift,
)
from psenet.constructors.polynomial import _ridge_weights
from psenet.models import build_network, neuron_count


def cox_de_boor(n: int, x: np.ndarray) -> np.ndarray:
    """Cardinal B-spline on integer knots 0..n+1 by the textbook recursion."""
    if n == 0:
        return ((x >= 0) & (x < 1)).astype(float)
    return (x * cox_de_boor(n - 1, x) + (n + 1 - x) * cox_de_boor(n - 1, x - 1)) / n


# ------------------------------------------------------------------ B-splines


class TestBspline:
    def test_weights_hand_derived(self):
        assert bspline_weights(1).tolist() == [0.5, -1.0, 0.5]
        assert bspline_weights(2).tolist() == [-1 / 6, 0.5, -0.5, 1 / 6]

    @pytest.mark.parametrize("n", range(1, 8))
    def test_weights_annihilate_low_powers(self, n):
        # Divided-difference weights kill every polynomial of degree <= n.
        w = [Fraction(v).limit_denominator(10**7) for v in bspline_weights(n)]
        for r in range(n + 1):
            assert sum(wi * i**r for i, wi in enumerate(w)) == 0

    def test_hat_function(self):
        assert bspline_eval(1, np.array([0.5]))[0] == pytest.approx(0.5)
        assert bspline_eval(1, np.array([1.0]))[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("n", range(1, 6))
    def test_matches_recursion(self, n):
        x = np.linspace(-1.0, n + 2.0, 1000)
        np.testing.assert_allclose(bspline_eval(n, x), cox_de_boor(n, x), rtol=0, atol=1e-10)

    @pytest.mark.parametrize("n", range(1, 6))
    def test_partition_of_unity(self, n):
        t = np.linspace(0.0, 3.0, 1000)
        total = sum(bspline_eval(n, t - j) for j in range(-n - 1, 5))
        np.testing.assert_allclose(total, 1.0, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("n", range(1, 6))
    def test_compact_support(self, n):
        x = np.concatenate([np.linspace(-5, 0, 50), np.linspace(n + 1, n + 6, 50)])
        assert not bspline_eval(n, x).any()

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 3), k=st.integers(0, 15), seed=st.integers(0, 2**32 - 1))
    def test_series_to_pse(self, n, k, seed):
        rng = np.random.default_rng(seed)
        s = BsplineSeries(n, k, rng.uniform(-1, 1, k + n + 1))
        net = bspline_series_to_pse(s)
        x = np.linspace(0.0, 1.0, 1000)
        h = 1.0 / (k + 1)
        oracle = sum(c * cox_de_boor(n, x / h - (i - n)) for i, c in enumerate(s.c))
        oracle[-1] = s(x[-1:])[0]  # the half-open recursion drops the right end
        np.testing.assert_allclose(net.forward(x[:, None])[:, 0], oracle, rtol=0, atol=1e-9)
        assert net.widths[n] <= k + n + 1

    def test_series_length_checked(self):
        with pytest.raises(ValueError):
            BsplineSeries(2, 3, np.zeros(5))


# ------------------------------------------------------------------- lowering


class TestLowering:
    def test_selector(self):
        assert selector_alpha(2, 2).tolist() == [
            [1, 1, 0, 0, 0, 0],
            [0, 0, 1, 1, 0, 0],
            [0, 0, 0, 0, 1, 1],
        ]

    @pytest.mark.parametrize("n", [0, 1, 2, 4])
    def test_lowered_matches(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            net = random_generalized(rng, depth=3, n=n, width=5, d_in=5)
            low = lower_generalized(net)
            assert [layer.d_out for layer in low.layers] == [(n + 1) * 5] * 3
            X = rng.uniform(-1, 1, (100, 5))
            ref = net.forward(X)
            np.testing.assert_allclose(low.forward(X), ref, rtol=1e-8, atol=1e-12 * np.abs(ref).max())

    def test_rejects_shared_layers(self):
        with pytest.raises(TypeError):
            lower_generalized(build_network("pse2", 2, 3, 2))

    def test_rejects_mixed_degrees(self):
        a = build_network("gpse1", 2, 3, 1)
        b = build_network("gpse2", 3, 3, 1)
        a.layers.append(b.layers[0])
        with pytest.raises(ValueError):
            lower_generalized(a)


# ----------------------------------------------------------------- polynomials


class TestPolynomial:
    @pytest.mark.parametrize("i", range(1, 7))
    def test_monomial_identity(self, i):
        pos, neg = monomial_pair(i)
        t = np.linspace(-2, 2, 41)
        np.testing.assert_allclose(pos * np.maximum(t, 0) ** i + neg * np.maximum(-t, 0) ** i, t**i, atol=1e-12)

    def test_exponent_count(self):
        for d in range(1, 4):
            for i in range(6):
                assert len(exponents(d, i)) == math.comb(i + d - 1, i)

    @pytest.mark.parametrize("d,i", [(1, 3), (2, 2), (2, 5), (3, 4), (3, 6)])
    def test_ridge_directions_well_conditioned(self, d, i):
        _, lam = _ridge_weights(d, i, np.ones(math.comb(i + d - 1, i)), 0, 0)
        assert np.all(np.isfinite(lam))

    def test_singular_directions_reported(self):
        # A column of zeros can never be fixed by resampling with 0 retries.
        with pytest.raises(SingularDirectionsError):
            import psenet.constructors.polynomial as mod

            orig = mod.lattice_directions
            mod.lattice_directions = lambda d, i: np.zeros((math.comb(i + d - 1, i), d))
            try:
                _ridge_weights(2, 3, np.ones(4), 0, 0)
            finally:
                mod.lattice_directions = orig

    def test_ridge_matrix_rows(self):
        M = ridge_matrix(np.array([[1.0, 2.0]]), 2)
        # (x + 2y)^2 = x^2 + 4xy + 4y^2 in the order of exponents(2, 2)
        coef = dict(zip(exponents(2, 2), M[0]))
        assert coef == {(2, 0): 1.0, (1, 1): 4.0, (0, 2): 4.0}

    def test_product_uses_six_neurons(self):
        net = polynomial_to_pse(Polynomial(2, {(1, 1): 1.0}))
        assert neuron_count(net) <= 6
        X = np.random.default_rng(0).uniform(-1, 1, (100, 2))
        np.testing.assert_allclose(net.forward(X)[:, 0], X[:, 0] * X[:, 1], atol=1e-13)

    def test_square_identity(self):
        net = polynomial_to_pse(Polynomial(1, {(2,): 1.0}))
        x = np.linspace(-3, 3, 61)[:, None]
        np.testing.assert_allclose(net.forward(x)[:, 0], x[:, 0] ** 2, rtol=1e-14)

    def test_affine_only(self):
        net = polynomial_to_pse(Polynomial(2, {(0, 0): 2.0, (1, 0): -1.0, (0, 1): 0.5}))
        assert net.widths == (1, 0)
        assert net.forward(np.array([1.0, 2.0]))[0] == pytest.approx(2.0)

    @settings(max_examples=40, deadline=None)
    @given(d=st.integers(1, 3), k=st.integers(0, 4), seed=st.integers(0, 2**32 - 1))
    def test_random_reproduction(self, d, k, seed):
        rng = np.random.default_rng(seed)
        p = Polynomial.random(d, k, rng)
        net = polynomial_to_pse(p)
        X = rng.uniform(-1, 1, (1000, d))
        ref = np.array([sum(c * np.prod(x ** np.array(a)) for a, c in p.coeffs.items()) for x in X])
        dev = np.max(np.abs(net.forward(X)[:, 0] - ref)) / max(np.max(np.abs(ref)), 1e-300)
        assert dev <= 1e-8
        assert neuron_count(net) <= neuron_bound(d, k)


# -------------------------------------------------------------- piecewise


class TestPiecewise:
    def test_taylor_shift(self):
        # q(t) = t^2 -> q(s + 1) = s^2 + 2s + 1
        assert taylor_shift([0.0, 0.0, 1.0], 1.0).tolist() == [1.0, 2.0, 1.0]

    def test_hat(self):
        p = PiecewisePoly([0.0, 0.5, 1.0], [[0.0, 2.0], [1.0, -2.0]], (1, 1))
        net = piecewise_poly_to_pse(p)
        x = np.linspace(0, 1, 11)
        np.testing.assert_allclose(net.forward(x[:, None])[:, 0], 1 - np.abs(2 * x - 1), atol=1e-15)

    def test_discontinuity_rejected(self):
        with pytest.raises(ValueError, match="knot 1"):
            PiecewisePoly([0.0, 0.5, 1.0], [[0.0, 1.0], [0.0, 1.0]], (1, 1))

    def test_decreasing_degrees_rejected_with_index(self):
        p = PiecewisePoly.random([0.0, 0.5, 1.0], (3, 2), np.random.default_rng(0))
        with pytest.raises(ValueError, match=r"degree\[1\]"):
            piecewise_poly_to_pse(p)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_random_exact(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        mesh = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n - 1)), [1.0]])
        if np.min(np.diff(mesh)) < 1e-3:
            return
        degrees = tuple(int(v) for v in np.sort(rng.integers(1, 6, n)))
        p = PiecewisePoly.random(mesh, degrees, rng)
        net = piecewise_poly_to_pse(p)
        x = np.linspace(0, 1, 2000)
        np.testing.assert_allclose(net.forward(x[:, None])[:, 0], p(x), rtol=0, atol=1e-10)
        # Element i contributes at most p_i - j + 1 neurons of power j overall.
        for j in range(1, max(degrees) + 1):
            assert net.widths[j] <= sum(1 for q in degrees if q >= j)


# ------------------------------------------------------------------------ hp


class TestHp:
    def test_mesh(self):
        mesh, degrees = hp_geometric_mesh(4)
        assert mesh.tolist() == [0.0, 0.125, 0.25, 0.5, 1.0]
        assert degrees == (1, 2, 3, 4)

    def test_degrees_clamped_monotone(self):
        _, degrees = hp_geometric_mesh(6, mu=0.4, delta=1.0)
        assert degrees[0] == 1 and all(b >= a for a, b in zip(degrees, degrees[1:]))

    def test_lobatto_endpoints(self):
        s = lobatto_nodes(4)
        assert s[0] == 0.0 and s[-1] == 1.0 and np.all(np.diff(s) > 0)

    def test_interpolates_polynomials_exactly(self):
        f = lambda x: 1 + x - 2 * x**3  # noqa: E731
        mesh, degrees = hp_geometric_mesh(5)
        p = hp_interpolate(f, mesh, (3,) * 5)
        x = np.linspace(0, 1, 301)
        np.testing.assert_allclose(p(x), f(x), atol=1e-12)

    def test_degree_zero_rejected(self):
        with pytest.raises(ValueError):
            hp_interpolate(np.sqrt, [0.0, 1.0], (0,))

    def test_network_matches_interpolant(self):
        f = lambda x: x ** (2 / 3)  # noqa: E731
        net = singular_to_pse(f, 6)
        mesh, degrees = hp_geometric_mesh(6)
        p = hp_interpolate(f, mesh, degrees)
        x = np.linspace(0, 1, 999)
        np.testing.assert_allclose(net.forward(x[:, None])[:, 0], p(x), atol=1e-10)
        np.testing.assert_allclose(net.forward(mesh[:, None])[:, 0], f(mesh), atol=1e-12)
