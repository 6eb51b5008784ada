r"""Exponentially scaled modified Bessel functions of integer order.

Provides :math:`\tilde I_n(a) = e^{-a} I_n(a)` for all orders ``0..nmax`` at
once, which is what the heat-kernel representation of the nearest-neighbour
lattice Green's function needs:

.. math::
    \int_{\mathbb{T}} e^{ipx} e^{-a(1-\cos p)}\,\frac{dp}{2\pi} = e^{-a} I_{|x|}(a).

Small arguments use the power series, moderate arguments Miller's downward
recurrence normalised with :math:`I_0 + 2\sum_{n\ge1} I_n = e^{a}`, and large
arguments the Hankel asymptotic series for :math:`I_0, I_1` followed by upward
recurrence (stable while ``n`` is well below ``a``).
"""

import math

import numpy as np

_SERIES_MAX = 0.5
_ASYMPTOTIC_MIN = 600.0
_RESCALE = 1e200


def asymptotic_coeffs(n, order):
    """Coefficients of the large-argument series of ``exp(-a) I_n(a)``.

    ``exp(-a) I_n(a) ~ (2 pi a)^(-1/2) * sum_m c[m] a^(-m)``.
    """
    mu = 4.0 * n * n
    c = np.empty(order + 1)
    c[0] = 1.0
    for m in range(1, order + 1):
        c[m] = -c[m - 1] * (mu - (2 * m - 1) ** 2) / (8.0 * m)
    return c


def _series(nmax, a):
    out = np.zeros((nmax + 1, a.size))
    half = 0.5 * a
    for n in range(nmax + 1):
        term = half**n / math.factorial(n)
        total = term.copy()
        for m in range(1, 40):
            term = term * half * half / (m * (m + n))
            total += term
            if np.all(term <= 1e-17 * total):
                break
        out[n] = total
    return out * np.exp(-a)


def _miller(nmax, a):
    start = int(max(nmax, a.max()) + 30 + 10 * math.sqrt(a.max())) + 1
    out = np.zeros((nmax + 1, a.size))
    inv = 2.0 / a
    hi = np.zeros_like(a)
    cur = np.full_like(a, 1e-300)
    norm = np.zeros_like(a)
    for n in range(start, 0, -1):
        lo = hi + n * inv * cur
        hi, cur = cur, lo
        # cur now holds the (unnormalised) value for order n - 1
        if n - 1 <= nmax:
            out[n - 1] = cur
        norm += 2.0 * hi
        big = cur > _RESCALE
        if np.any(big):
            scale = np.where(big, 1.0 / _RESCALE, 1.0)
            cur *= scale
            hi *= scale
            norm *= scale
            out *= scale
    norm += cur
    return out / norm


def _asymptotic(nmax, a):
    out = np.zeros((nmax + 1, a.size))
    pref = 1.0 / np.sqrt(2.0 * np.pi * a)
    for n in (0, 1):
        if n > nmax:
            break
        c = asymptotic_coeffs(n, 30)
        inv = 1.0 / a
        total = np.zeros_like(a)
        power = np.ones_like(a)
        for cm in c:
            term = cm * power
            total += term
            power = power * inv
        out[n] = pref * total
    for n in range(1, nmax):
        out[n + 1] = out[n - 1] - (2.0 * n / a) * out[n]
    return out


def ive_orders(nmax, a):
    """Return ``exp(-a) I_n(a)`` for ``n = 0..nmax``.

    Parameters
    ----------
    nmax : int
        Highest order required.
    a : array_like
        Non-negative arguments.

    Returns
    -------
    ndarray
        Shape ``(nmax + 1,) + a.shape``.
    """
    a = np.asarray(a, dtype=float)
    shape = a.shape
    flat = a.ravel()
    if np.any(flat < 0):
        raise ValueError("arguments must be non-negative")
    out = np.zeros((nmax + 1, flat.size))
    small = flat <= _SERIES_MAX
    large = flat >= _ASYMPTOTIC_MIN
    mid = ~(small | large)
    if np.any(small):
        out[:, small] = _series(nmax, flat[small])
    if np.any(mid):
        out[:, mid] = _miller(nmax, flat[mid])
    if np.any(large):
        lg = flat[large]
        # upward recurrence only while the order stays well below the argument
        if nmax <= 0.25 * lg.min():
            out[:, large] = _asymptotic(nmax, lg)
        else:
            out[:, large] = _miller(nmax, lg)
    return out.reshape((nmax + 1,) + shape)


def ive(n, a):
    """Scaled modified Bessel function ``exp(-a) I_n(a)`` for a single order."""
    n = abs(int(n))
    return ive_orders(n, a)[n]
