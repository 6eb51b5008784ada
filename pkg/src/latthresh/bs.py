"""Birman-Schwinger matrices on the even support basis, bound states and sweeps.

The operator ``mu |V|^(1/2) R_0(k, z) |V|^(1/2)`` restricted to even functions is
finite-dimensional: with orthonormal even vectors ``(delta_x + delta_-x)/sqrt 2``
(and ``delta_0``) its matrix is

    B(i, j) = mu sqrt(|v_i v_j|) c_i c_j [G(x_i - x_j) + G(x_i + x_j)],

with ``c_0 = 1/sqrt 2`` and ``c = 1`` otherwise.  Eigenvalue branches of
``B_1(k, z)`` increase with ``z``; bound states are the crossings
``mu lambda_i = 1``.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .green import GreenError, green_kernel
from .model import canonical, pair_dispersion

TAU_EIG = 1e-10
TAU_Z = 1e-10
_LOG_FLOOR = {1: math.log(1e-300), 2: -2.0e5}


class NearCriticalWarning(UserWarning):
    """A Birman-Schwinger eigenvalue sits within tolerance of 1."""


@dataclass(frozen=True)
class EvenBasis:
    """Orbit representatives of ``supp(v)`` under ``x -> -x``."""

    dim: int
    reps: tuple
    weights: np.ndarray
    values: np.ndarray

    @property
    def size(self):
        return len(self.reps)

    @property
    def sqrt_abs(self):
        return np.sqrt(np.abs(self.values))

    def offsets(self):
        """Canonical offsets ``x_i -+ x_j`` needed by the matrix."""
        out = set()
        for a in self.reps:
            for b in self.reps:
                out.add(canonical(np.subtract(a, b)))
                out.add(canonical(np.add(a, b)))
        return sorted(out)

    def assemble(self, table):
        """Unit-coupling matrix from a kernel lookup ``table.value(x)``."""
        m = self.size
        reps = np.asarray(self.reps)
        out = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                g = table.value(reps[i] - reps[j]) + table.value(reps[i] + reps[j])
                out[i, j] = out[j, i] = g
        scale = self.sqrt_abs * self.weights
        return out * np.outer(scale, scale)

    def to_function(self, vec):
        """Even function on ``supp(v)`` with the given basis coefficients."""
        f = {}
        for x, w, c in zip(self.reps, self.weights, vec):
            amp = c if not any(x) else c / math.sqrt(2.0)
            f[x] = amp
            f[tuple(-t for t in x)] = amp
        return f


def build_even_basis(potential):
    """Even orbit basis of the potential's support, lexicographic order."""
    reps = sorted({canonical(x) for x, v in potential.values.items() if v != 0.0})
    if not reps:
        raise ValueError("potential has empty support")
    weights = np.array([1.0 / math.sqrt(2.0) if not any(x) else 1.0 for x in reps])
    values = np.array([potential.values[x] for x in reps])
    return EvenBasis(potential.dim, tuple(reps), weights, values)


@dataclass
class BsMatrix:
    """Birman-Schwinger matrix at coupling ``mu`` and binding ``b = emin - z``."""

    mu: float
    k: np.ndarray
    z: float
    b: float
    log_b: float
    entries: np.ndarray
    eigs: np.ndarray
    vectors: np.ndarray
    green_error: float
    method: str

    @property
    def lambda_max(self):
        return float(self.eigs[0])


def _solve(entries):
    w, v = np.linalg.eigh(entries)
    return w[::-1].copy(), v[:, ::-1].copy()


def unit_matrix(pair, basis, b=0.0, log_b=None, green_mode="auto"):
    """``B_1`` entries plus the kernel table's error estimate and method."""
    table = green_kernel(pair, basis.offsets(), b=b, log_b=log_b, method=green_mode)
    # propagate the kernel error to the matrix (norm bound)
    err = float(2 * table.max_error * (basis.sqrt_abs * basis.weights).sum() ** 2)
    return basis.assemble(table), err, table.method


def build_bs_matrix(mu, pair, z=None, potential=None, green_mode="auto", b=None, log_b=None,
                    basis=None):
    """Assemble and diagonalise ``B_mu(k, z)``.

    Parameters
    ----------
    mu : float
        Coupling (> 0).
    pair : PairDispersion
    z : float, optional
        Energy; alternatively pass the binding ``b`` or ``log_b``.
    potential : Potential
    green_mode : str
        Kernel route (``auto``, ``bessel``, ``quadrature``, ``subtraction``).
    """
    if mu <= 0:
        raise ValueError("coupling must be positive")
    if basis is None:
        basis = build_even_basis(potential)
    if z is not None:
        b = pair.emin - z
        if b < 0:
            raise GreenError(f"z = {z} lies above the threshold {pair.emin}")
    if b is None and log_b is None:
        raise ValueError("one of z, b, log_b is required")
    if log_b is not None:
        b = math.exp(log_b) if log_b > -745 else 0.0
    unit, err, method = unit_matrix(pair, basis, b=b, log_b=log_b, green_mode=green_mode)
    entries = mu * unit
    eigs, vecs = _solve(entries)
    return BsMatrix(mu, pair.k, pair.emin - b, b, log_b, entries, eigs, vecs, mu * err, method)


def count_above_one(bs, tau=TAU_EIG):
    """``N_+(1, B)``: eigenvalues above ``1 + tau`` (tau relative to max(1, lambda_max)).

    Emits :class:`NearCriticalWarning` when an eigenvalue is within the band.
    """
    band = tau * max(1.0, abs(bs.lambda_max))
    if np.any(np.abs(bs.eigs - 1.0) <= band):
        warnings.warn(f"near-critical: eigenvalue within {band:.1e} of 1 at z={bs.z}; refine z",
                      NearCriticalWarning, stacklevel=2)
    return int(np.sum(bs.eigs > 1.0 + band))


@dataclass
class BoundStateSet:
    """Bound states of ``H_mu(k)`` below ``emin``.

    ``energies`` are distinct levels in increasing order; ``bindings`` are
    ``emin - z`` (0.0 when below double precision, see ``log_bindings``).
    """

    k: np.ndarray
    mu: float
    emin: float
    energies: np.ndarray
    bindings: np.ndarray
    log_bindings: np.ndarray
    multiplicities: np.ndarray
    residuals: np.ndarray
    basis_size: int
    flags: list = field(default_factory=list)

    @property
    def count(self):
        return int(np.sum(self.multiplicities))

    def __len__(self):
        return self.count


class _Branches:
    """Cached eigenvalues of ``B_1`` as functions of ``log b`` (or ``b = 0``)."""

    def __init__(self, pair, basis, green_mode):
        self.pair, self.basis, self.green_mode = pair, basis, green_mode
        self.cache = {}

    def at_log(self, lb):
        if lb not in self.cache:
            b = math.exp(lb) if lb > -745 else 0.0
            unit, _, _ = unit_matrix(self.pair, self.basis, b=b,
                                     log_b=lb if b < 1e-300 else None,
                                     green_mode=self.green_mode)
            self.cache[lb] = np.linalg.eigvalsh(unit)[::-1]
        return self.cache[lb]

    def at_threshold(self):
        if "thr" not in self.cache:
            unit, _, _ = unit_matrix(self.pair, self.basis, b=0.0, green_mode=self.green_mode)
            self.cache["thr"] = np.linalg.eigvalsh(unit)[::-1]
        return self.cache["thr"]


def _effective_dim(pair):
    f = pair.axis_factors()
    if f is not None:
        return int(np.sum(f > 1e-15))
    return pair.dim


def _log_ladder(lb_hi, floor):
    out = [lb_hi]
    step = 2.0
    while out[-1] > floor:
        out.append(max(floor, out[-1] - step))
        step *= 2.0
    return out


def solve_bound_states(mu, pair, potential, green_mode="auto", tol=TAU_Z, basis=None):
    """All bound states of ``H_mu(k)`` below ``emin(k)``.

    Each eigenvalue branch of ``B_1`` is solved for ``mu lambda_i = 1`` with a
    bracketing root finder in ``log b`` (so states far below double precision
    in two dimensions are still located).  Counts are cross-checked with
    ``N_+`` between levels; on disagreement the levels are recomputed by
    counting bisection.
    """
    if mu <= 0:
        raise ValueError("coupling must be positive")
    if basis is None:
        basis = build_even_basis(potential)
    m = basis.size
    br = _Branches(pair, basis, green_mode)
    flags = []
    deff = _effective_dim(pair)
    threshold_ok = deff >= 3 and pair.certified and pair.dim >= 3
    # above this binding mu * lambda_max < 1 (||B_1|| <= max|v| / b)
    lb_hi = math.log(2.0 * mu * float(np.abs(basis.values).max()) + 1e-300)
    floor = _LOG_FLOOR.get(deff, math.log(1e-300))
    if deff >= 3 and not threshold_ok:
        flags.append("threshold kernel unavailable (k outside G); shallow states may be missed")
    ladder = _log_ladder(lb_hi, floor)
    lims = br.at_threshold() if threshold_ok else br.at_log(ladder[-1])

    roots = []
    for i in range(m):
        g_lim = mu * lims[i] - 1.0
        if g_lim <= TAU_EIG * max(1.0, mu * lims[0]):
            if abs(g_lim) <= TAU_EIG * max(1.0, mu * lims[0]):
                flags.append(f"branch {i}: eigenvalue at threshold within tolerance of 1")
            continue
        lo = None
        prev = ladder[0]
        for lb in ladder[1:]:
            if mu * br.at_log(lb)[i] - 1.0 > 0:
                lo = lb
                break
            prev = lb
        if lo is None:
            flags.append(f"branch {i}: state shallower than b = exp({floor:.0f}) not resolved")
            roots.append(floor)
            continue
        f = lambda lb: mu * br.at_log(lb)[i] - 1.0  # noqa: E731
        root = optimize.brentq(f, lo, prev, xtol=1e-13, rtol=1e-15, maxiter=200)
        roots.append(root)

    roots = np.sort(np.asarray(roots))[::-1]  # shallow -> deep
    levels = _group(roots, tol)
    count_ok = _check_counts(mu, br, levels, ladder, threshold_ok)
    if not count_ok:
        flags.append("branch bookkeeping disagreed with N_+ counts; used counting bisection")
        levels = _counting_levels(mu, br, ladder, threshold_ok, tol)

    lbs = np.array([lv for lv, _ in levels])[::-1] if levels else np.zeros(0)
    mult = np.array([n for _, n in levels], dtype=int)[::-1] if levels else np.zeros(0, int)
    bind = np.where(lbs > -745, np.exp(lbs), 0.0) if lbs.size else np.zeros(0)
    energies = pair.emin - bind
    residuals = np.array([min(abs(mu * e - 1.0) for e in br.at_log(lb)) for lb in lbs])
    order = np.argsort(energies, kind="stable")
    return BoundStateSet(pair.k, mu, pair.emin, energies[order], bind[order], lbs[order],
                         mult[order], residuals[order], m, flags)


def _group(roots, tol):
    """Merge roots (log b, shallow first) whose bindings differ by <= tol."""
    levels = []
    for r in roots:
        b = math.exp(r) if r > -745 else 0.0
        if levels:
            lb0, n = levels[-1]
            b0 = math.exp(lb0) if lb0 > -745 else 0.0
            if abs(b - b0) <= tol and abs(r - lb0) <= 1e-6 + tol:
                levels[-1] = (lb0, n + 1)
                continue
        levels.append((r, 1))
    return levels


def _count(mu, br, lb):
    eigs = br.at_log(lb)
    return int(np.sum(mu * eigs > 1.0 + TAU_EIG * max(1.0, mu * eigs[0])))


def _check_counts(mu, br, levels, ladder, threshold_ok):
    """``N_+`` must step by each level's multiplicity across it."""
    total = sum(n for _, n in levels)
    if threshold_ok:
        lim = br.at_threshold()
        at_thr = int(np.sum(mu * lim > 1.0 + TAU_EIG * max(1.0, mu * lim[0])))
    else:
        at_thr = _count(mu, br, ladder[-1])
    if at_thr != total:
        return False
    if _count(mu, br, ladder[0]) != 0:
        return False
    seen = 0
    for (lb_a, n), nxt in zip(levels, levels[1:] + [None]):
        seen += n
        if nxt is None:
            break
        mid = 0.5 * (lb_a + nxt[0])
        if _count(mu, br, mid) != total - seen:
            return False
    return True


def _counting_levels(mu, br, ladder, threshold_ok, tol):
    """Levels from bisection of the monotone counting function ``N_+(log b)``."""
    levels = []
    lo_lb = ladder[-1]
    target = _count(mu, br, lo_lb) if not threshold_ok else None
    if threshold_ok:
        lim = br.at_threshold()
        target = int(np.sum(mu * lim > 1.0 + TAU_EIG * max(1.0, mu * lim[0])))
    hi_lb = ladder[0]
    # find each jump of N_+ from 0 (deep side) up to target
    current_hi = hi_lb
    have = 0
    while have < target:
        a, b = current_hi, lo_lb
        while abs(a - b) > 1e-13 * max(1.0, abs(a)):
            mid = 0.5 * (a + b)
            if _count(mu, br, mid) > have:
                b = mid
            else:
                a = mid
        jump = _count(mu, br, b) - have
        if jump <= 0:
            break
        levels.append((0.5 * (a + b), jump))
        have += jump
        current_hi = b
    return levels[::-1]


@dataclass(frozen=True)
class CriticalCouplings:
    """Critical couplings ``mu*_i = 1 / lambda_i(B_1(k, emin))``.

    Ordered by decreasing eigenvalue (so increasing ``mu*``): ``mu > mu*_i``
    implies at least ``i`` bound states.
    """

    mu_star: np.ndarray
    eigenvalues: np.ndarray
    errors: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        return iter(self.mu_star)

    def __len__(self):
        return len(self.mu_star)

    def __getitem__(self, i):
        return self.mu_star[i]


def critical_coupling(pair, potential, green_mode="auto", basis=None):
    """Per-branch critical couplings at the threshold (d >= 3, k in G)."""
    if basis is None:
        basis = build_even_basis(potential)
    unit, err, _ = unit_matrix(pair, basis, b=0.0, green_mode=green_mode)
    lam, vec = _solve(unit)
    with np.errstate(divide="ignore"):
        mu = np.where(lam > 0, 1.0 / lam, np.inf)
        mu_err = np.where(lam > 0, err / lam**2, np.inf)
    return CriticalCouplings(mu, lam, mu_err, vec)


@dataclass
class SweepRow:
    k: np.ndarray
    emin: float
    states: BoundStateSet = None
    error: str = None


def dispersion_sweep(mu, eps, potential, k_grid, green_mode="auto", threads=1):
    """Bound states over a list of quasi-momenta; per-k failures are recorded."""
    k_grid = np.atleast_2d(np.asarray(k_grid, dtype=float))
    basis = build_even_basis(potential)

    def one(k):
        pair = pair_dispersion(eps, k)
        try:
            states = solve_bound_states(mu, pair, potential, green_mode=green_mode, basis=basis)
            return SweepRow(pair.k, pair.emin, states)
        except (GreenError, ValueError, np.linalg.LinAlgError) as exc:
            return SweepRow(pair.k, pair.emin, None, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, k_grid))
    return [one(k) for k in k_grid]
