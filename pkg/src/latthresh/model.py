"""Dispersions, potentials, quasi-momenta and the pair dispersion of a fibre.

A single-particle band is stored through finitely many Fourier coefficients
``eps_hat(s)`` (one representative per pair ``{s, -s}``), so every function on
the torus that appears downstream is a trigonometric polynomial.
"""

import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

TAU_MORSE = 1e-8
PI_TOL = 1e-9
DEFAULT_NGRID = 64
# cap on the number of points of the extremum scan
_SCAN_BUDGET = 2**21


class HypothesisViolation(ValueError):
    """Input lies outside the class of dispersions/potentials handled here."""


def canonical(s):
    """Representative of ``{s, -s}``: first nonzero component positive."""
    s = tuple(int(c) for c in s)
    for c in s:
        if c > 0:
            return s
        if c < 0:
            return tuple(-c for c in s)
    return s


def wrap_momentum(k):
    """Reduce each component of ``k`` into ``[-pi, pi)``."""
    k = np.asarray(k, dtype=float)
    return (k + np.pi) % (2 * np.pi) - np.pi


def _even_table(dim, table, name):
    out = {}
    for key, val in table.items():
        key = tuple(int(c) for c in key)
        if len(key) != dim:
            raise ValueError(f"{name}: index {key} has wrong dimension (expected {dim})")
        val = float(val)
        if not np.isfinite(val):
            raise ValueError(f"{name}: non-finite value at {key}")
        rep = canonical(key)
        if rep in out and out[rep] != val:
            raise HypothesisViolation(f"{name} is not even: values at {key} and its mirror differ")
        out[rep] = val
    return {k: v for k, v in sorted(out.items()) if v != 0.0}


@dataclass(frozen=True)
class DispersionRelation:
    """Even real band ``eps(p) = sum_s eps_hat(s) cos(p.s)`` on the d-torus.

    ``coeffs`` maps canonical representatives to coefficients; the mirror
    ``-s`` carries the same value implicitly.
    """

    dim: int
    coeffs: dict

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "coeffs", _even_table(self.dim, self.coeffs, "dispersion"))

    @classmethod
    def from_table(cls, dim, entries):
        """Build from ``[{"s": [...], "value": v}, ...]`` (mirrors optional)."""
        return cls(dim, {tuple(e["s"]): e["value"] for e in entries})

    def full_coeffs(self):
        """Coefficient map expanded to both ``s`` and ``-s``."""
        out = {}
        for s, v in self.coeffs.items():
            out[s] = v
            out[tuple(-c for c in s)] = v
        return out

    @property
    def support_radius(self):
        return max((max(abs(c) for c in s) for s in self.coeffs), default=0)

    def hoppings(self):
        """Per-axis hoppings ``t_j`` if ``eps = const + sum_j t_j (1 - cos p_j)``.

        Returns ``None`` for any other shape (or non-positive hoppings).
        """
        t = np.zeros(self.dim)
        for s, v in self.coeffs.items():
            if not any(s):
                continue
            nz = [j for j, c in enumerate(s) if c]
            if len(nz) != 1 or abs(s[nz[0]]) != 1:
                return None
            t[nz[0]] = -2.0 * v
        if np.any(t <= 0):
            return None
        return t

    @property
    def is_nearest_neighbour(self):
        return self.hoppings() is not None

    def __call__(self, p):
        return eval_dispersion(self, p)


def eval_dispersion(eps, p):
    """Evaluate ``eps(p)``; ``p`` has shape ``(..., d)``."""
    p = np.asarray(p, dtype=float)
    out = np.zeros(p.shape[:-1])
    for s, v in eps.coeffs.items():
        if not any(s):
            out = out + v
        else:
            out = out + 2.0 * v * np.cos(p @ np.asarray(s, dtype=float))
    return out


def laplacian_dispersion(d):
    """Band of the discrete Laplacian, ``sum_j (1 - cos p_j)``."""
    if int(d) < 1:
        raise ValueError("dimension must be >= 1")
    d = int(d)
    coeffs = {(0,) * d: float(d)}
    for j in range(d):
        e = [0] * d
        e[j] = 1
        coeffs[tuple(e)] = -0.5
    return DispersionRelation(d, coeffs)


@dataclass(frozen=True)
class Potential:
    """Finitely supported, even, non-positive pair potential on Z^d."""

    dim: int
    values: dict

    def __post_init__(self):
        vals = _even_table(self.dim, self.values, "potential")
        if any(v > 0 for v in vals.values()):
            raise HypothesisViolation("potential must be non-positive")
        full = {}
        for x, v in vals.items():
            full[x] = v
            full[tuple(-c for c in x)] = v
        object.__setattr__(self, "values", dict(sorted(full.items())))

    @classmethod
    def from_table(cls, dim, entries):
        return cls(dim, {tuple(e["x"]): e["value"] for e in entries})

    @classmethod
    def delta(cls, dim, strength=1.0):
        """On-site attraction ``-strength * delta_0``."""
        return cls(dim, {(0,) * dim: -abs(strength)})

    @property
    def support(self):
        return list(self.values)

    @property
    def support_radius(self):
        return max((max(abs(c) for c in x) for x in self.values), default=0)

    @property
    def max_abs(self):
        return max((abs(v) for v in self.values.values()), default=0.0)

    def __call__(self, x):
        return self.values.get(tuple(int(c) for c in x), 0.0)


def pair_fourier_coeffs(eps, k):
    """Coefficients ``E_hat_k(s) = 2 eps_hat(s) cos(k.s / 2)`` over the full support."""
    k = wrap_momentum(k)
    return {s: 2.0 * v * float(np.cos(0.5 * np.dot(k, s))) for s, v in eps.full_coeffs().items()}


@dataclass(frozen=True, eq=False)
class PairDispersion:
    """``E_k(p) = eps(k/2 + p) + eps(k/2 - p)`` for one quasi-momentum ``k``."""

    base: DispersionRelation
    k: np.ndarray
    emin: float
    emax: float
    minimizer: np.ndarray
    hessian: np.ndarray
    unique_minimum: bool
    coeffs: dict = field(repr=False)

    @property
    def dim(self):
        return self.base.dim

    @property
    def certified(self):
        """Morse at a unique minimum: ``k`` lies in the certified region G."""
        return self.unique_minimum and self.hessian_min_eig >= TAU_MORSE

    @property
    def hessian_min_eig(self):
        return float(np.linalg.eigvalsh(self.hessian)[0])

    @property
    def is_nearest_neighbour(self):
        return self.base.is_nearest_neighbour

    def axis_factors(self):
        """``t_j cos(k_j / 2)`` for nearest-neighbour bands, else ``None``."""
        t = self.base.hoppings()
        if t is None:
            return None
        return t * np.cos(0.5 * self.k)

    def rep_terms(self):
        """``(s, 2 E_hat_k(s))`` over canonical ``s != 0``."""
        return [(s, 2.0 * self.coeffs[s]) for s in self.base.coeffs if any(s)]

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        out = np.full(p.shape[:-1], self.coeffs.get((0,) * self.dim, 0.0))
        for s, c in self.rep_terms():
            out = out + c * np.cos(p @ np.asarray(s, dtype=float))
        return out

    def excess(self, q):
        """``E_k(p0 + q) - emin`` evaluated without cancellation.

        Requires a minimiser with components in ``{0, pi}``.
        """
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1])
        for s, c in self.rep_terms():
            sigma = np.cos(np.dot(self.minimizer, s))
            half = 0.5 * (q @ np.asarray(s, dtype=float))
            out = out - 2.0 * c * sigma * np.sin(half) ** 2
        return out

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        g = np.zeros(self.dim)
        for s, c in self.rep_terms():
            sv = np.asarray(s, dtype=float)
            g -= c * np.sin(p @ sv) * sv
        return g

    def hessian_at(self, p):
        p = np.asarray(p, dtype=float)
        h = np.zeros((self.dim, self.dim))
        for s, c in self.rep_terms():
            sv = np.asarray(s, dtype=float)
            h -= c * np.cos(p @ sv) * np.outer(sv, sv)
        return h

    @property
    def key(self):
        return (self.dim, tuple(sorted(self.base.coeffs.items())), tuple(np.round(self.k, 15)))


def _scan_grid(dim, n):
    n = max(4, min(n, int(_SCAN_BUDGET ** (1.0 / dim))))
    n += n % 2
    axis = -np.pi + 2 * np.pi * np.arange(n) / n
    return n, axis


def _grid_values(pd, axis):
    dim = pd.dim
    vals = np.full((axis.size,) * dim, pd.coeffs.get((0,) * dim, 0.0))
    for s, c in pd.rep_terms():
        phase = np.zeros((1,) * dim)
        for j, sj in enumerate(s):
            if sj:
                shape = [1] * dim
                shape[j] = axis.size
                phase = phase + sj * axis.reshape(shape)
        vals = vals + c * np.cos(phase)
    return vals


def _newton(pd, p, sign, scale):
    """Refine a local minimum of ``sign * E_k`` from ``p``."""
    for _ in range(60):
        g = sign * pd.gradient(p)
        if np.linalg.norm(g) <= 1e-15 * scale:
            break
        h = sign * pd.hessian_at(p)
        w = np.linalg.eigvalsh(h)
        if w[0] > 1e-12 * scale:
            step = -np.linalg.solve(h, g)
        else:
            step = -g / max(np.abs(w).max(), scale)
        f0 = sign * pd(p)
        t = 1.0
        while t > 1e-8 and sign * pd(p + t * step) > f0 + 1e-16 * scale:
            t *= 0.5
        p = p + t * step
        if np.linalg.norm(t * step) < 1e-15:
            break
    return p


def _snap(p):
    """Snap components within 1e-9 of 0 or +-pi; output in [-pi, pi)."""
    p = wrap_momentum(p)
    p = np.where(np.abs(p) < 1e-9, 0.0, p)
    p = np.where(np.abs(np.abs(p) - np.pi) < 1e-9, -np.pi, p)
    return p


def _torus_dist(a, b):
    d = wrap_momentum(np.asarray(a) - np.asarray(b))
    return float(np.linalg.norm(d))


def pair_dispersion(eps, k, n_grid=DEFAULT_NGRID):
    """Extrema, minimiser and Hessian of ``E_k`` by grid scan plus Newton polish.

    The minimum is flagged non-unique when distinct global minimisers are
    found; degenerate Hessians are exposed through :attr:`PairDispersion.certified`.
    """
    k = wrap_momentum(np.atleast_1d(k))
    if k.size != eps.dim:
        raise ValueError(f"quasi-momentum has {k.size} components, expected {eps.dim}")
    coeffs = pair_fourier_coeffs(eps, k)
    pd = PairDispersion(eps, k, 0.0, 0.0, np.zeros(eps.dim), np.zeros((eps.dim,) * 2), True, coeffs)
    n, axis = _scan_grid(eps.dim, n_grid)
    vals = _grid_values(pd, axis)
    spread = float(vals.max() - vals.min())
    scale = max(spread, 1e-300)

    if spread <= 1e-13 * max(1.0, abs(float(vals.max()))):
        value = float(vals.flat[0])
        hz = np.zeros((eps.dim, eps.dim))
        return PairDispersion(eps, k, value, value, np.zeros(eps.dim), hz, False, coeffs)

    def extremum(sign):
        v = sign * vals
        is_loc = np.ones(v.shape, dtype=bool)
        for ax in range(eps.dim):
            is_loc &= v <= np.roll(v, 1, axis=ax)
            is_loc &= v <= np.roll(v, -1, axis=ax)
        idx = np.argwhere(is_loc)
        order = np.argsort(v[is_loc])[:64]
        found = []
        for i in order:
            p = _newton(pd, axis[idx[i]], sign, scale)
            found.append((float(sign * pd(p)), p))
        best = min(f for f, _ in found)
        tol = 1e-10 * scale
        clusters = []
        for f, p in found:
            if f <= best + tol and all(_torus_dist(p, c) > 1e-6 for c in clusters):
                clusters.append(p)
        return sign * best, clusters

    emin, mins = extremum(1.0)
    emax, _ = extremum(-1.0)
    p0 = _snap(mins[0])
    # prefer a minimiser on the {0, pi}^d lattice when one is among the clusters
    for c in mins:
        c = _snap(c)
        if np.all((c == 0.0) | (c == -np.pi)):
            p0 = c
            break
    hess = pd.hessian_at(p0)
    emin = float(pd(p0)) if len(mins) == 1 else emin
    return PairDispersion(eps, k, emin, float(emax), p0, hess, len(mins) == 1, coeffs)


def in_region_G_laplacian(k, tol=PI_TOL):
    """True iff no component of ``k`` equals ``pi`` (mod 2 pi) within ``tol``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    dist = np.abs(np.abs(wrap_momentum(k)) - np.pi)
    return bool(np.all(dist > tol))


def check_hypothesis(eps, n_grid=DEFAULT_NGRID):
    """Raise :class:`HypothesisViolation` unless ``eps`` has a unique
    non-degenerate minimum at the origin."""
    pd = pair_dispersion(eps, np.zeros(eps.dim), n_grid)
    if not pd.unique_minimum:
        raise HypothesisViolation("dispersion has several global minima")
    if np.any(pd.minimizer != 0.0):
        raise HypothesisViolation(f"dispersion minimum is at {pd.minimizer}, not at 0")
    if pd.hessian_min_eig < TAU_MORSE:
        raise HypothesisViolation("dispersion minimum is degenerate (not Morse)")
    return pd


@dataclass(frozen=True)
class CndReport:
    max_violation: float
    n_samples: int
    tol: float

    @property
    def consistent(self):
        return self.max_violation <= self.tol


def check_cnd(eps, n_samples, rng_seed=0, batch_size=6, tol=1e-10):
    """Randomised search for violations of conditional negative definiteness.

    For each random batch ``p_1..p_n`` the largest value of
    ``sum_ij eps(p_i - p_j) z_i conj(z_j)`` over unit ``z`` with ``sum z = 0`` is
    the top eigenvalue of the matrix compressed to the zero-sum subspace, so
    no sampling over ``z`` is needed.  A positive value refutes the property;
    the check never certifies it.
    """
    if n_samples <= 0:
        warnings.warn("check_cnd called with n_samples=0: vacuous pass", stacklevel=2)
        return CndReport(-np.inf, 0, tol)
    rng = np.random.default_rng(rng_seed)
    n = max(2, batch_size)
    # orthonormal basis of the zero-sum subspace
    basis = np.linalg.qr(np.eye(n)[:, :-1] - 1.0 / n)[0][:, : n - 1]
    worst = -np.inf
    for _ in range(n_samples):
        pts = rng.uniform(-np.pi, np.pi, size=(n, eps.dim))
        a = eval_dispersion(eps, pts[:, None, :] - pts[None, :, :])
        worst = max(worst, float(np.linalg.eigvalsh(basis.T @ a @ basis)[-1]))
    return CndReport(worst, n_samples, tol)
