import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hazard_ctmc.special import digamma, trigamma

GRID = np.geomspace(1e-3, 1e6, 400)


class TestReferenceValues:
    def test_digamma_one(self):
        assert_allclose(digamma(1.0), -0.5772156649015329, rtol=0, atol=1e-12)

    def test_trigamma_one(self):
        assert_allclose(trigamma(1.0), math.pi**2 / 6, rtol=0, atol=1e-12)

    def test_digamma_half(self):
        assert_allclose(digamma(0.5), -0.5772156649015329 - 2 * math.log(2), atol=1e-12)

    @pytest.mark.parametrize("n", range(2, 21))
    def test_harmonic_numbers(self, n):
        harmonic = sum(Fraction(1, i) for i in range(1, n))
        assert abs(digamma(n) - digamma(1) - float(harmonic)) < 1e-13


class TestAgainstMpmath:
    def test_digamma_grid(self):
        err = max(abs(digamma(x) - float(mpmath.digamma(x))) for x in GRID)
        assert err < 1e-10

    def test_trigamma_grid(self):
        err = max(abs(trigamma(x) - float(mpmath.psi(1, x))) for x in GRID)
        assert err < 1e-10

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e6))
    def test_random_points(self, x):
        assert abs(digamma(x) - float(mpmath.digamma(x))) < 1e-10
        assert abs(trigamma(x) - float(mpmath.psi(1, x))) < 1e-10


class TestIdentities:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-2, 1e4))
    def test_recurrences(self, x):
        assert_allclose(digamma(x + 1) - digamma(x), 1 / x, rtol=1e-10, atol=1e-12)
        assert_allclose(trigamma(x) - trigamma(x + 1), 1 / x**2, rtol=1e-10, atol=1e-12)

    def test_monotone(self):
        d = [digamma(x) for x in GRID]
        t = [trigamma(x) for x in GRID]
        assert np.all(np.diff(d) > 0) and np.all(np.diff(t) < 0)

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
    def test_domain(self, bad):
        with pytest.raises(ValueError):
            digamma(bad)
        with pytest.raises(ValueError):
            trigamma(bad)
