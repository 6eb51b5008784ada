r"""Lattice resolvent kernels.

All evaluators compute

.. math::
    G(x; b) = \int_{\mathbb{T}^d} \frac{e^{i p\cdot x}}{E_k(p) - E_{\min}(k) + b}
              \,\frac{d^d p}{(2\pi)^d},\qquad b = E_{\min}(k) - z \ge 0,

i.e. the kernel of the free fibre resolvent, parameterised by the binding
``b`` rather than by ``z``.  Very shallow two-dimensional states have bindings
far below the double-precision range, so the Bessel and subtraction paths
also accept ``log_b`` directly.

Four independent routes are provided:

``quadrature``
    Tensor trapezoid rule on the torus (spectral for ``b > 0``), with an FFT or
    DCT-I doing all lattice points at once.
``bessel``
    Heat-kernel integral for nearest-neighbour bands, where each axis factor
    is ``exp(-a t) I_n(a t)``.
``subtraction``
    Trapezoid rule on the remainder after removing a Gaussian-damped
    quadratic model of the minimum, plus the model's closed-form integral.
``extrapolation``
    Fit of off-threshold values against the local expansion in ``b``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import special

from .bessel import asymptotic_coeffs, ive_orders
from .model import canonical

DEFAULT_N = 64
DEFAULT_NMAX = 512
POINT_BUDGET = 2**24
TAIL_ORDER = 12
_GL_HI = np.polynomial.legendre.leggauss(20)
_GL_LO = np.polynomial.legendre.leggauss(12)
_THETA_NODES = np.polynomial.legendre.leggauss(16)
_EULER = 0.5772156649015329


class GreenError(ValueError):
    """Invalid resolvent request (above threshold, d too small, outside G)."""


@dataclass
class GreenTable:
    """Kernel values at a list of lattice points.

    ``errors`` are absolute error estimates; ``flags`` collects warnings such as
    non-convergence or cross-method disagreement.
    """

    points: list
    values: np.ndarray
    errors: np.ndarray
    method: str
    b: float = 0.0
    log_b: float = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.points = [tuple(int(c) for c in p) for p in self.points]
        self.values = np.asarray(self.values, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        self._index = {p: i for i, p in enumerate(self.points)}

    def value(self, x):
        x = tuple(int(c) for c in x)
        if x in self._index:
            return float(self.values[self._index[x]])
        return float(self.values[self._index[tuple(-c for c in x)]])

    def error(self, x):
        x = tuple(int(c) for c in x)
        if x not in self._index:
            x = tuple(-c for c in x)
        return float(self.errors[self._index[x]])

    @property
    def max_error(self):
        return float(self.errors.max()) if self.errors.size else 0.0

    def as_dict(self):
        return {p: float(v) for p, v in zip(self.points, self.values)}

    def rows(self):
        """``(x..., value, abs_error, method)`` rows for CSV output."""
        return [list(p) + [float(v), float(e), self.method]
                for p, v, e in zip(self.points, self.values, self.errors)]


@dataclass(frozen=True)
class GreenRequest:
    """A resolvent-kernel request at energy ``z`` for a list of points."""

    pair: object
    z: float
    points: tuple

    def validate(self):
        if self.z > self.pair.emin:
            raise GreenError(f"z = {self.z} lies above the threshold {self.pair.emin}")
        if self.z == self.pair.emin:
            require_threshold(self.pair)
        return self

    @property
    def binding(self):
        return self.pair.emin - self.z


def require_threshold(pair):
    """Check the preconditions of a threshold (``z = emin``) evaluation."""
    if pair.dim <= 2:
        raise GreenError(
            "the threshold kernel diverges for d <= 2; it requires d >= 3 "
            "(use z < emin instead)")
    if not pair.certified:
        raise GreenError(f"k = {pair.k} is outside the certified region G "
                         "(degenerate or non-unique minimum)")


def _points(points, dim):
    pts = np.atleast_2d(np.asarray(points, dtype=int))
    if pts.size == 0:
        return np.zeros((0, dim), dtype=int)
    if pts.shape[1] != dim:
        raise ValueError(f"points must have {dim} components")
    return pts


def _unique_canonical(points):
    """Map points to canonical representatives (kernels are even)."""
    reps = sorted({canonical(p) for p in map(tuple, points)})
    index = {r: i for i, r in enumerate(reps)}
    back = np.array([index[canonical(tuple(p))] for p in points], dtype=int)
    return reps, back


# ---------------------------------------------------------------------------
# heat-kernel (Bessel) path
# ---------------------------------------------------------------------------

def _panel_nodes(t_end, scale, rule):
    """Gauss-Legendre nodes on ``[0, 2^-6/scale]`` and geometric panels to ``t_end``."""
    x, w = rule
    edges = [0.0]
    e = 2.0**-6 / scale
    while e < t_end:
        edges.append(e)
        e *= 2.0
    edges.append(max(t_end, edges[-1] * 2.0) if len(edges) == 1 else e)
    edges = np.asarray(edges)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights, float(edges[-1])


def _axis_series(nmax, order):
    return np.array([asymptotic_coeffs(n, order) for n in range(nmax + 1)])


class _HeatKernel:
    """Integrals ``int_0^inf t^power e^{-tb} sum_terms c prod_j ive_{n_j}(a_j t) dt``.

    ``groups`` is a list (one per output) of ``[(coef, index_vector), ...]``.
    """

    def __init__(self, a, groups, power=0):
        self.a = np.asarray(a, dtype=float)
        self.active = self.a > 0
        self.dp = int(self.active.sum())
        self.power = power
        coefs, idx, owner = [], [], []
        for g, terms in enumerate(groups):
            for c, n in terms:
                n = np.abs(np.asarray(n, dtype=int))
                if np.any(n[~self.active] != 0):
                    continue  # delta factor on a flat axis
                coefs.append(c)
                idx.append(n)
                owner.append(g)
        self.ngroups = len(groups)
        self.coefs = np.asarray(coefs, dtype=float)
        self.idx = np.asarray(idx, dtype=int).reshape(-1, self.a.size)
        self.owner = np.asarray(owner, dtype=int)
        self.nmax = self.idx.max(axis=0) if self.idx.size else np.zeros(self.a.size, int)

    def _sum_groups(self, per_term):
        out = np.zeros((self.ngroups,) + per_term.shape[1:])
        np.add.at(out, self.owner, self.coefs.reshape((-1,) + (1,) * (per_term.ndim - 1)) * per_term)
        return out

    def _products(self, t):
        prod = np.ones((len(self.coefs), t.size))
        for j in np.flatnonzero(self.active):
            table = ive_orders(int(self.nmax[j]), self.a[j] * t)
            prod *= table[self.idx[:, j]]
        return prod

    def _tail_series(self):
        """Coefficients ``C_m`` with ``prod_j ive ~ pref * t^(-d'/2) sum_m C_m t^-m``."""
        M = TAIL_ORDER
        total = np.zeros((len(self.coefs), M + 1))
        total[:, 0] = 1.0
        for j in np.flatnonzero(self.active):
            ser = _axis_series(int(self.nmax[j]), M) * self.a[j] ** -np.arange(M + 1)
            s = ser[self.idx[:, j]]
            new = np.zeros_like(total)
            for m in range(M + 1):
                new[:, m:] += total[:, [m]] * s[:, : M + 1 - m]
            total = new
        pref = (2 * np.pi) ** (-0.5 * self.dp) * np.prod(self.a[self.active] ** -0.5)
        return pref * self._sum_groups(total)

    def evaluate(self, b=0.0, log_b=None):
        if self.dp == 0:
            raise GreenError("all axes are flat: the kernel is not defined")
        if log_b is not None:
            b = _exp(log_b)
            if b < 1e-300:
                b = 0.0
            else:
                log_b = None
        amin, amax = self.a[self.active].min(), self.a[self.active].max()
        nm = int(self.nmax[self.active].max()) if self.idx.size else 0
        t_asym = max(60.0, 4.0 * nm * nm + 60.0) / amin
        # analytic tail from t_asym unless e^{-tb} already kills it there
        series_tail = b * t_asym <= 1.0
        t_end = t_asym if series_tail else t_asym + (50.0 + max(0.0, -math.log(b))) / b
        vals = []
        for rule in (_GL_HI, _GL_LO):
            t, w, t_top = _panel_nodes(t_end, amax, rule)
            weight = w * t**self.power * np.exp(-t * b)
            vals.append(self._sum_groups(self._products(t)) @ weight)
        hi, lo = vals
        err = np.abs(hi - lo) + 1e-15 * np.abs(hi)
        if series_tail:
            tail, tail_err = self._series_tail(t_top, b, log_b)
            hi = hi + tail
            err = err + tail_err
        return hi, err

    def _series_tail(self, T, b, log_b):
        """``int_T^inf t^power e^{-tb} (asymptotic product) dt`` term by term.

        Each term is ``C_m T^(1-sigma) h(1-sigma, T b)`` with the scaled
        incomplete gamma ``h(s, x) = x^-s Gamma(s, x)``; for ``b`` below double
        precision (``log_b`` given) the ``b -> 0`` limits are used.
        """
        C = self._tail_series()
        x = T * b
        tail = np.zeros(self.ngroups)
        last = np.zeros(self.ngroups)
        for m in range(C.shape[1]):
            c = C[:, m]
            if not np.any(np.abs(c) > 1e-300):
                continue
            sigma = 0.5 * self.dp + m - self.power
            term = c * T ** (1.0 - sigma) * _scaled_gamma(1.0 - sigma, x, log_b, T)
            tail += term
            last = np.abs(term)
        return tail, last


def _scaled_gamma(s, x, log_b=None, T=1.0):
    """``x^-s Gamma(s, x)`` for ``s`` in ``{1/2, 0, -1/2, -1, ...}`` and ``x <= 1``.

    Downward recurrence ``h(s) = (x h(s+1) - e^-x) / s`` is stable for small
    ``x``.  ``x = 0`` gives the limits ``-1/s`` (s < 0), and for ``s = 0`` the
    logarithm is taken from ``log_b`` when provided.
    """
    twice = int(round(2 * s))
    if x == 0.0:
        if twice < 0:
            return -1.0 / s
        if twice == 0 and log_b is not None:
            return -_EULER - math.log(T) - log_b
        raise GreenError("kernel diverges at the threshold in this dimension")
    if twice % 2:
        h, cur = math.sqrt(math.pi / x) * special.erfc(math.sqrt(x)), 0.5
    else:
        h, cur = float(special.exp1(x)), 0.0
    ex = math.exp(-x)
    while cur > s + 1e-12:
        cur -= 1.0
        h = (x * h - ex) / cur
    return h


def green_bessel(pair, points, b=0.0, log_b=None):
    """Heat-kernel evaluation for nearest-neighbour bands, any ``b >= 0``.

    ``G(x; b) = int_0^inf e^{-tb} prod_j e^{-a_j t} I_{|x_j|}(a_j t) dt`` with
    ``a_j = 2 t_j cos(k_j/2)``.  The large-``t`` tail is integrated from the
    asymptotic series of the Bessel product.
    """
    factors = pair.axis_factors()
    if factors is None:
        raise GreenError("Bessel representation needs a nearest-neighbour dispersion")
    pts = _points(points, pair.dim)
    reps, back = _unique_canonical(pts)
    hk = _HeatKernel(2.0 * factors, [[(1.0, r)] for r in reps])
    vals, errs = hk.evaluate(b=b, log_b=log_b)
    return GreenTable([tuple(p) for p in pts], vals[back], errs[back], "bessel",
                      b=b if log_b is None else _exp(log_b), log_b=log_b)


def green_at_threshold_bessel(pair, points):
    """Threshold kernel ``G(x; 0)`` by the Bessel integral (d >= 3, k in G)."""
    require_threshold(pair)
    return green_bessel(pair, points, b=0.0)


def _exp(log_b):
    return math.exp(log_b) if log_b > -745 else 0.0


# ---------------------------------------------------------------------------
# grid helpers
# ---------------------------------------------------------------------------

def separately_even(pair):
    """True if ``E_k`` is even in every coordinate separately."""
    for s, c in pair.rep_terms():
        for j in range(pair.dim):
            flipped = list(s)
            flipped[j] = -flipped[j]
            other = pair.coeffs.get(canonical(flipped), 0.0)
            if abs(2.0 * other - c) > 1e-15 * max(1.0, abs(c)):
                return False
    return True


def _axes(n, dim, dct):
    if dct:
        ax = np.pi * np.arange(n // 2 + 1) / (n // 2)
    else:
        ax = 2 * np.pi * np.arange(n) / n
        ax = np.where(ax >= np.pi, ax - 2 * np.pi, ax)
    return [ax.reshape([-1 if i == j else 1 for i in range(dim)]) for j in range(dim)]


def _dot(s, axes):
    out = 0.0
    for sj, ax in zip(s, axes):
        if sj:
            out = out + sj * ax
    return out


def _grid_pair(pair, axes):
    dim = pair.dim
    vals = np.full(_shape(axes), pair.coeffs.get((0,) * dim, 0.0))
    for s, c in pair.rep_terms():
        vals = vals + c * np.cos(_dot(s, axes))
    return vals


def _shape(axes):
    return tuple(max(a.shape) for a in axes)


def _grid_excess(pair, axes):
    out = np.zeros(_shape(axes))
    for s, c in pair.rep_terms():
        sigma = math.cos(float(np.dot(pair.minimizer, s)))
        out = out - 2.0 * c * sigma * np.sin(0.5 * _dot(s, axes)) ** 2
    return out


def _grid_quadratic(hess, axes):
    out = np.zeros(_shape(axes))
    d = len(axes)
    for i in range(d):
        for j in range(d):
            if hess[i, j] != 0.0:
                out = out + 0.5 * hess[i, j] * axes[i] * axes[j]
    return out


def _lattice_sum(f, n, pts, dct):
    """``sum_q cos(q.x) f(q)`` over the full N-grid for each row of ``pts``."""
    if dct:
        tr = sfft.dctn(f, type=1)
        m = n // 2
        idx = np.mod(pts, n)
        idx = np.where(idx > m, n - idx, idx)
    else:
        tr = sfft.fftn(f).real
        idx = np.mod(pts, n)
    return tr[tuple(idx.T)]


def _cap_n(dim, n, n_max, dct):
    while n > 8:
        per = n // 2 + 1 if dct else n
        if per**dim <= POINT_BUDGET:
            break
        n //= 2
    return min(n, n_max)


def _fits(dim, n, dct):
    per = n // 2 + 1 if dct else n
    return per**dim <= POINT_BUDGET


# ---------------------------------------------------------------------------
# trapezoid path (off threshold)
# ---------------------------------------------------------------------------

def green_off_threshold(pair, z, points, n_axis=DEFAULT_N, n_max=DEFAULT_NMAX, tol=1e-12):
    """Trapezoid quadrature of the resolvent kernel for ``z < emin``.

    Starts at ``n_axis`` points per axis and doubles until successive values
    agree to ``tol`` (absolute) or ``n_max`` is reached; the last difference is
    the error estimate.  Non-convergence is recorded in ``flags``.
    """
    req = GreenRequest(pair, float(z), tuple(map(tuple, _points(points, pair.dim)))).validate()
    if req.binding <= 0:
        raise GreenError("trapezoid quadrature needs z strictly below the threshold")
    pts = _points(points, pair.dim)
    dct = separately_even(pair)
    n_max = _cap_n(pair.dim, n_max, n_max, dct)
    n = min(n_axis, n_max)
    prev = None
    flags = []
    while True:
        axes = _axes(n, pair.dim, dct)
        f = 1.0 / (_grid_pair(pair, axes) - z)
        cur = _lattice_sum(f, n, pts, dct) / float(n) ** pair.dim
        if prev is not None:
            err = np.abs(cur - prev)
            if err.max() <= tol or 2 * n > n_max:
                break
        else:
            err = np.full(len(pts), np.inf)
            if 2 * n > n_max:
                break
        prev = cur
        n *= 2
    if not np.all(err <= tol):
        flags.append(f"trapezoid not converged at N={n}: max error {float(err.max()):.3g}")
    err = np.where(np.isfinite(err), err, np.abs(cur))
    return GreenTable([tuple(p) for p in pts], cur, err + 1e-15 * np.abs(cur), "quadrature",
                      b=req.binding, flags=flags)


def trapezoid_affordable(pair, b, n_max=DEFAULT_NMAX):
    """True if the trapezoid rule resolves a peak of width ~sqrt(b) within ``n_max``."""
    if b <= 0:
        return False
    lam = max(np.linalg.eigvalsh(pair.hessian)[-1], 1e-12)
    need = 36.0 / math.sqrt(2.0 * b / lam)
    dct = separately_even(pair)
    return need <= _cap_n(pair.dim, n_max, n_max, dct)


# ---------------------------------------------------------------------------
# singularity subtraction (any b >= 0, certified minima)
# ---------------------------------------------------------------------------

def _sphere(d):
    return 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)


def _model_radial(d, alpha, b, log_b):
    """``J_d(b) = 1/2 int_0^inf u^(d/2-1) e^(-alpha u) / (u + b) du``."""
    if d == 1:
        if b <= 0:
            raise GreenError("one-dimensional kernel diverges at the threshold")
        return 0.5 * math.pi / math.sqrt(b) * special.erfcx(math.sqrt(alpha * b))
    if d == 2:
        if b > 0 and alpha * b > 1e-12:
            return 0.5 * math.exp(alpha * b) * special.exp1(alpha * b)
        if log_b is None:
            raise GreenError("two-dimensional kernel diverges at the threshold")
        return 0.5 * (-_EULER - math.log(alpha) - log_b)
    base = 0.5 * math.gamma(0.5 * d - 1.0) * alpha ** (1.0 - 0.5 * d)
    if b == 0:
        return base
    return base - b * _model_radial(d - 2, alpha, b, log_b)


def _subtraction_once(pair, n, pts, b, log_b, dct, alpha):
    d = pair.dim
    axes = _axes(n, d, dct)
    dq = _grid_excess(pair, axes)
    qq = _grid_quadratic(pair.hessian, axes)
    origin = (0,) * d
    with np.errstate(divide="ignore"):
        f = 1.0 / (dq + b)
        g = np.exp(-alpha * qq) / (qq + b)
    f[origin] = 0.0
    g[origin] = 0.0
    if dct:
        m = n // 2
        w = np.ones(m + 1) * 2.0
        w[0] = w[-1] = 1.0
        wt = 1.0
        for j in range(d):
            wt = wt * w.reshape([-1 if i == j else 1 for i in range(d)])
        model = float(np.sum(wt * g))
    else:
        model = float(np.sum(g))
    return (_lattice_sum(f, n, pts, dct) - model) / float(n) ** d


def green_subtraction(pair, points, b=0.0, log_b=None, n_axis=None, n_max=None):
    """Singularity-subtracted quadrature for a certified minimum.

    The quadratic model ``w(q)/(Q(q) + b)`` with ``Q = q^T H q / 2`` and Gaussian
    cutoff ``w = exp(-alpha Q)`` is removed on the grid and added back in
    closed form; the remainder's trapezoid sum is Richardson-extrapolated in
    ``h^d`` from ``N`` and ``2N`` points per axis.
    """
    if not pair.certified:
        raise GreenError(f"k = {pair.k} is outside the certified region G")
    d = pair.dim
    if log_b is not None:
        b = _exp(log_b)
    pts = _points(points, d)
    dct = separately_even(pair)
    if n_axis is None:
        n_axis = {1: 4096, 2: 512, 3: 128, 4: 32}.get(d, 16)
    if n_max is None:
        n_max = 2 * n_axis
    n = _cap_n(d, n_axis, n_max, dct)
    n = min(n, n_max // 2) if _fits(d, 2 * n, dct) else n // 2
    n = max(n, 4)
    hess = pair.hessian
    lam = np.linalg.eigvalsh(hess)[0]
    alpha = 72.0 / (lam * np.pi**2)
    det = np.linalg.det(0.5 * hess)
    analytic = det**-0.5 * (2 * np.pi) ** (-d) * _sphere(d) * _model_radial(d, alpha, b, log_b)
    t1 = _subtraction_once(pair, n, pts, b, log_b, dct, alpha)
    t2 = _subtraction_once(pair, 2 * n, pts, b, log_b, dct, alpha)
    rich = t2 + (t2 - t1) / (2.0**d - 1.0)
    err = np.abs(t2 - t1) / (2.0**d - 1.0)
    sigma = np.cos(pts @ np.asarray(pair.minimizer))
    vals = sigma * (rich + analytic)
    return GreenTable([tuple(p) for p in pts], vals, err + 1e-14 * np.abs(vals), "subtraction",
                      b=b, log_b=log_b)


# ---------------------------------------------------------------------------
# extrapolation from below the threshold
# ---------------------------------------------------------------------------

def _ansatz(d, b):
    b = np.asarray(b, dtype=float)
    if d % 2:
        return np.stack([b ** (0.5 * j) for j in range(b.size)], axis=1)
    cols = [np.ones_like(b)]
    j = 1
    while len(cols) < b.size:
        cols.append(b**j * np.log(b))
        if len(cols) < b.size:
            cols.append(b**j)
        j += 1
    return np.stack(cols, axis=1)


def green_extrapolation(pair, points, eps0=0.5, levels=5, evaluator=None):
    """Threshold kernel from values at ``b_n = eps0 4^-n`` fitted to the local
    expansion in ``b`` (half-integer powers for odd ``d``, ``b^j log b`` terms
    for even ``d``).  The error estimate is the change when the shallowest
    sample is dropped."""
    require_threshold(pair)
    pts = _points(points, pair.dim)
    bs = eps0 * 4.0 ** -np.arange(levels)
    if evaluator is None:
        evaluator = lambda b: green_kernel(pair, pts, b=b)  # noqa: E731
    samples, sample_err = [], []
    for b in bs:
        tab = evaluator(float(b))
        samples.append(tab.values)
        sample_err.append(tab.errors)
    samples = np.array(samples)
    full = np.linalg.lstsq(_ansatz(pair.dim, bs), samples, rcond=None)[0][0]
    fewer = np.linalg.lstsq(_ansatz(pair.dim, bs[:-1]), samples[:-1], rcond=None)[0][0]
    err = np.abs(full - fewer) + np.max(sample_err, axis=0) * 10
    return GreenTable([tuple(p) for p in pts], full, err, "extrapolation")


def green_threshold_generic(pair, points, method="subtraction", cross_check=False, **opts):
    """Threshold kernel for any certified minimum (d >= 3).

    ``method`` selects ``"subtraction"`` or ``"extrapolation"``; with
    ``cross_check`` both run and a disagreement beyond ten times the combined
    error estimates is recorded in ``flags``.
    """
    require_threshold(pair)
    if method == "subtraction":
        main = green_subtraction(pair, points, b=0.0, **opts)
    elif method == "extrapolation":
        main = green_extrapolation(pair, points, **opts)
    else:
        raise ValueError(f"unknown method {method!r}")
    if cross_check:
        other = (green_extrapolation(pair, points) if method == "subtraction"
                 else green_subtraction(pair, points, b=0.0))
        gap = np.abs(main.values - other.values)
        bad = gap > 10.0 * (main.errors + other.errors)
        if np.any(bad):
            main.flags.append(f"subtraction/extrapolation disagree: max gap {gap.max():.3g}")
    return main


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------

def green_kernel(pair, points, b=None, z=None, log_b=None, method="auto", **opts):
    """Evaluate the kernel by the best available route.

    Exactly one of ``b``, ``z`` or ``log_b`` sets the energy.  ``auto`` picks the
    Bessel integral for nearest-neighbour bands, otherwise the trapezoid rule
    when it can resolve the resolvent peak, otherwise singularity subtraction.
    """
    if z is not None:
        b = pair.emin - z
        if b < 0:
            raise GreenError(f"z = {z} lies above the threshold {pair.emin}")
    if log_b is None and b is None:
        raise ValueError("one of b, z, log_b is required")
    if log_b is None and b > 0 and b < 1e-300:
        log_b = math.log(b)
    at_threshold = log_b is None and b == 0
    if at_threshold:
        require_threshold(pair)
    if method == "auto":
        if pair.is_nearest_neighbour and pair.axis_factors() is not None and np.any(pair.axis_factors() > 0):
            method = "bessel"
        elif log_b is None and not at_threshold and trapezoid_affordable(pair, b):
            method = "quadrature"
        else:
            method = "subtraction"
    if method == "bessel":
        return green_bessel(pair, points, b=b or 0.0, log_b=log_b)
    if method == "quadrature":
        if log_b is not None or at_threshold:
            raise GreenError("trapezoid quadrature needs a representable binding b > 0")
        return green_off_threshold(pair, pair.emin - b, points, **opts)
    if method == "subtraction":
        return green_subtraction(pair, points, b=b or 0.0, log_b=log_b, **opts)
    if method == "extrapolation":
        if not at_threshold:
            raise GreenError("extrapolation only targets the threshold")
        return green_extrapolation(pair, points)
    raise ValueError(f"unknown green method {method!r}")


# ---------------------------------------------------------------------------
# double resolvent kernel
# ---------------------------------------------------------------------------

def _require_pair_origin(pair_k, pair_k0):
    for p in (pair_k, pair_k0):
        require_threshold(p)
        if np.any(p.minimizer != 0.0):
            raise GreenError("double-resolvent kernel needs the minimum at p = 0")


def double_green_cs_kernel(pair_k, pair_k0, s, points, method="subtraction", n_axis=None):
    r"""Offset table ``D_s(w)`` of the form ``C_s``.

    .. math::
        D_s(w) = \int \frac{(1-\cos(p\cdot s))\cos(p\cdot w)}
                 {(E_k - E_{\min}(k))(E_{k_0} - E_{\min}(k_0))}\,d\eta(p).

    ``method="subtraction"`` works for any certified pair (minimum at 0);
    ``method="bessel"`` uses the two-time heat-kernel representation for
    nearest-neighbour bands.
    """
    s = tuple(int(c) for c in s)
    if not any(s):
        raise GreenError("s = 0 contributes nothing and is rejected")
    _require_pair_origin(pair_k, pair_k0)
    pts = _points(points, pair_k.dim)
    if method == "bessel":
        return _double_bessel(pair_k, pair_k0, s, pts)
    if method != "subtraction":
        raise ValueError(f"unknown method {method!r}")
    return _double_subtraction(pair_k, pair_k0, s, pts, n_axis)


def _double_bessel(pair_k, pair_k0, s, pts):
    fa, fb = pair_k.axis_factors(), pair_k0.axis_factors()
    if fa is None or fb is None:
        raise GreenError("Bessel representation needs a nearest-neighbour dispersion")
    a1, a0 = 2.0 * fa, 2.0 * fb
    s = np.asarray(s)
    groups = [[(1.0, w), (-0.5, w - s), (-0.5, w + s)] for w in pts]
    th, thw = _THETA_NODES
    theta = 0.5 * (th + 1.0)
    total = np.zeros(len(pts))
    err = np.zeros(len(pts))
    for t, wt in zip(theta, 0.5 * thw):
        hk = _HeatKernel(t * a1 + (1 - t) * a0, groups, power=1)
        v, e = hk.evaluate(b=0.0)
        total += wt * v
        err += wt * e
    # the theta integrand is smooth; compare against a coarser theta rule
    th8, thw8 = np.polynomial.legendre.leggauss(10)
    coarse = np.zeros(len(pts))
    for t, wt in zip(0.5 * (th8 + 1.0), 0.5 * thw8):
        coarse += wt * _HeatKernel(t * a1 + (1 - t) * a0, groups, power=1).evaluate(b=0.0)[0]
    err += np.abs(total - coarse)
    return GreenTable([tuple(p) for p in pts], total, err, "bessel")


def _double_subtraction(pair_k, pair_k0, s, pts, n_axis):
    d = pair_k.dim
    # (1 - cos(q.s)) is separately even only when s lies on a coordinate axis
    dct = (separately_even(pair_k) and separately_even(pair_k0)
           and sum(1 for c in s if c) == 1)
    if n_axis is None:
        n_axis = {3: 128, 4: 32}.get(d, 16)
    n = _cap_n(d, 2 * n_axis, 2 * n_axis, dct) // 2
    h1, h0 = pair_k.hessian, pair_k0.hessian
    lam = min(np.linalg.eigvalsh(h1)[0], np.linalg.eigvalsh(h0)[0])
    alpha = 72.0 / (lam * np.pi**2)
    th, thw = _THETA_NODES
    theta, thw = 0.5 * (th + 1.0), 0.5 * thw
    sv = np.asarray(s, dtype=float)

    analytic = 0.0
    for t, wt in zip(theta, thw):
        half = 0.5 * (t * h1 + (1 - t) * h0)
        quad = sv @ np.linalg.solve(half, sv) / d
        analytic += wt * 0.5 * np.linalg.det(half) ** -0.5 * quad
    analytic *= (2 * np.pi) ** (-d) * _sphere(d) * 0.5 * math.gamma(0.5 * d - 1) * alpha ** (1 - 0.5 * d)

    def once(n):
        axes = _axes(n, d, dct)
        e1 = _grid_excess(pair_k, axes)
        e0 = _grid_excess(pair_k0, axes)
        q1 = _grid_quadratic(h1, axes)
        q0 = _grid_quadratic(h0, axes)
        qs2 = _dot(s, axes) ** 2 * np.ones(_shape(axes))
        origin = (0,) * d
        with np.errstate(divide="ignore", invalid="ignore"):
            f = 2.0 * np.sin(0.5 * _dot(s, axes)) ** 2 / (e1 * e0)
            model = np.zeros(_shape(axes))
            for t, wt in zip(theta, thw):
                qt = t * q1 + (1 - t) * q0
                model += wt * np.exp(-alpha * qt) / qt**2
            model *= 0.5 * qs2
        f = f * np.ones(_shape(axes))
        f[origin] = 0.0
        model[origin] = 0.0
        return (_lattice_sum(f, n, pts, dct) - _lattice_sum(model, n, np.zeros_like(pts), dct)) / float(n) ** d

    t1, t2 = once(n), once(2 * n)
    rich = t2 + (t2 - t1) / (2.0**d - 1.0)
    err = np.abs(t2 - t1) / (2.0**d - 1.0)
    vals = rich + analytic
    return GreenTable([tuple(p) for p in pts], vals, err + 1e-14 * np.abs(vals), "subtraction")
