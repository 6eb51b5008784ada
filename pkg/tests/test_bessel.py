import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from latthresh.bessel import asymptotic_coeffs, ive, ive_orders


@pytest.mark.parametrize("a", [0.0, 1e-8, 0.3, 0.5, 0.51, 2.0, 17.5, 150.0, 599.0, 600.0, 5e3, 1e6])
def test_orders_match_scipy(a):
    got = ive_orders(40, np.array([a]))[:, 0]
    ref = special.ive(np.arange(41), a)
    scale = np.maximum(np.abs(ref), 1e-300)
    mask = ref > 1e-290
    assert np.all(np.abs(got[mask] - ref[mask]) / scale[mask] < 1e-12)


@given(st.integers(0, 60), st.floats(1e-6, 1e5))
@settings(max_examples=200, deadline=None)
def test_single_order_property(n, a):
    ref = special.ive(n, a)
    if ref < 1e-280:
        return
    assert abs(ive(n, a) - ref) <= 1e-12 * ref


def test_vectorised_shape():
    a = np.linspace(0.1, 50, 12).reshape(3, 4)
    assert ive_orders(5, a).shape == (6, 3, 4)


def test_asymptotic_leading_terms():
    # ive(n, a) ~ (2 pi a)^(-1/2) (1 - (4n^2 - 1)/(8a) + ...)
    c = asymptotic_coeffs(2, 3)
    assert c[0] == pytest.approx(1.0)
    assert c[1] == pytest.approx(-(16 - 1) / 8)


def test_order_monotone_decreasing():
    vals = ive_orders(30, np.array([3.0]))[:, 0]
    assert np.all(np.diff(vals) < 0)
