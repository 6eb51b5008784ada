"""Threshold classification, the Lambda form, phase maps and threshold solutions.

At the threshold ``z = emin(k)`` (d >= 3, k in G) the Birman-Schwinger matrix
``B_mu(k, emin)`` decides everything: eigenvalues above 1 count bound states,
an eigenvalue equal to 1 makes the threshold singular (a resonance for d = 3, 4
and an eigenvalue for d >= 5).

Moving the quasi-momentum away from a singular ``k0`` is governed by the
quadratic form ``L(k, k0; psi) = <psi, Lambda psi>`` with

    Lambda = 2 sum_{s != 0} eps_hat(s) [cos(k.s/2) - cos(k0.s/2)] C_s,

where ``C_s`` is the even-basis matrix of the offset table ``D_s``.  The
sign of ``Lambda`` on the singular eigenspace decides emission.
"""

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .bs import build_even_basis, solve_bound_states, unit_matrix
from .green import GreenError, double_green_cs_kernel, green_kernel, require_threshold
from .model import canonical, pair_dispersion, pair_fourier_coeffs

TAU_SING_MIN = 1e-8
TAU_L_REL = 1e-9


@dataclass
class ThresholdReport:
    """Classification of ``emin(k)`` for ``H_mu(k)``.

    ``status`` is ``regular``, ``singular`` or ``inconclusive``; ``eigenspace``
    holds orthonormal even-basis vectors of the eigenvalue 1 (shape m x n), and
    ``bound_space`` those of eigenvalues above 1 (one per bound state).
    """

    k: np.ndarray
    mu: float
    status: str
    multiplicity: int
    kind: str
    gap: float
    eigenspace: np.ndarray
    eigenvalues: np.ndarray
    tau_sing: float
    green_error: float
    bound_count: int
    bound_space: np.ndarray
    pair: object = field(repr=False, default=None)
    potential: object = field(repr=False, default=None)
    basis: object = field(repr=False, default=None)

    @property
    def singular(self):
        return self.status == "singular"

    def as_dict(self):
        return {
            "k": [float(c) for c in self.k],
            "mu": float(self.mu),
            "status": self.status,
            "multiplicity": int(self.multiplicity),
            "kind": self.kind,
            "gap": float(self.gap),
            "tau_sing": float(self.tau_sing),
            "green_error": float(self.green_error),
            "bound_count": int(self.bound_count),
            "mu_lambda": [float(x) for x in self.eigenvalues],
            "eigenspace": self.eigenspace.T.tolist(),
        }


def threshold_kind(dim):
    return "resonance" if dim in (3, 4) else "eigenvalue"


def classify_threshold(mu, pair, potential, green_mode="auto", basis=None):
    """Regular / singular classification of the threshold at ``(mu, k)``.

    Singular means some ``|mu lambda_i - 1| <= tau_sing`` with
    ``tau_sing = max(1e-8, 3 x kernel error)``; a gap within a further two
    error bars of the band is reported as ``inconclusive``.
    """
    require_threshold(pair)
    if basis is None:
        basis = build_even_basis(potential)
    unit, err, _ = unit_matrix(pair, basis, b=0.0, green_mode=green_mode)
    w, v = np.linalg.eigh(mu * unit)
    w, v = w[::-1], v[:, ::-1]
    err = mu * err
    tau = max(TAU_SING_MIN, 3.0 * err)
    dist = np.abs(w - 1.0)
    gap = float(dist.min())
    sing = dist <= tau
    n = int(sing.sum())
    if n:
        status, kind = "singular", threshold_kind(pair.dim)
    elif gap <= tau + 2.0 * err:
        status, kind = "inconclusive", "none"
    else:
        status, kind = "regular", "none"
    above = (w > 1.0) & ~sing
    return ThresholdReport(pair.k, mu, status, n, kind, gap, v[:, sing], w, tau, err,
                           int(above.sum()), v[:, above], pair, potential, basis)


# ---------------------------------------------------------------------------
# Lambda form
# ---------------------------------------------------------------------------

_CS_CACHE = {}
_CS_LOCK = threading.Lock()


def _cs_matrix(pair_k, pair_k0, s, basis, method):
    key = (pair_k.key, pair_k0.key, s, basis.reps, method)
    with _CS_LOCK:
        hit = _CS_CACHE.get(key)
    if hit is not None:
        return hit
    table = double_green_cs_kernel(pair_k, pair_k0, s, basis.offsets(), method=method)
    out = (basis.assemble(table), table.max_error)
    with _CS_LOCK:
        _CS_CACHE[key] = out
    return out


@dataclass
class LambdaForm:
    """Matrix of ``L(k, k0; .)`` on the even basis (coupling included)."""

    k: np.ndarray
    k0: np.ndarray
    matrix: np.ndarray
    cs: dict
    weights: dict
    error: float

    @property
    def norm(self):
        return float(np.abs(np.linalg.eigvalsh(self.matrix)).max()) if self.matrix.size else 0.0


def build_lambda(k, k0, potential, eps, mu=1.0, pair_k=None, pair_k0=None, method=None,
                 extra_shells=0):
    """Assemble ``Lambda(k, k0)``.

    The sum over ``s`` runs over the support of ``eps_hat`` (the coefficients
    vanish elsewhere); ``extra_shells > 0`` adds further ``s`` with zero
    weight, which must leave the result unchanged.
    """
    pair_k = pair_k if pair_k is not None else pair_dispersion(eps, k)
    pair_k0 = pair_k0 if pair_k0 is not None else pair_dispersion(eps, k0)
    basis = build_even_basis(potential)
    if method is None:
        method = "bessel" if eps.is_nearest_neighbour else "subtraction"
    m = basis.size
    mat = np.zeros((m, m))
    cs, weights = {}, {}
    err = 0.0
    shells = [s for s in eps.coeffs if any(s)]
    if extra_shells:
        r = eps.support_radius + extra_shells
        for s in itertools.product(range(-r, r + 1), repeat=eps.dim):
            if any(s) and canonical(s) == s and s not in shells:
                shells.append(s)
    same = np.allclose(pair_k.k, pair_k0.k, atol=0.0)
    for s in shells:
        coeff = eps.coeffs.get(s, 0.0)
        sv = np.asarray(s, dtype=float)
        bracket = np.cos(0.5 * pair_k.k @ sv) - np.cos(0.5 * pair_k0.k @ sv)
        w = 4.0 * coeff * bracket  # s and -s together
        weights[s] = w
        if w == 0.0 or same:
            continue
        c_mat, c_err = _cs_matrix(pair_k, pair_k0, s, basis, method)
        cs[s] = c_mat
        mat += w * c_mat
        err += abs(w) * c_err * (basis.sqrt_abs * basis.weights).sum() ** 2 * 2
    mat = 0.5 * (mat + mat.T)
    return LambdaForm(pair_k.k, pair_k0.k, mu * mat, cs, weights, mu * err)


# ---------------------------------------------------------------------------
# phase maps
# ---------------------------------------------------------------------------

SET_NAMES = ("M_gt", "M_eq", "Mcal_gt", "Mcal_eq", "Mcal_lt")


@dataclass
class PhaseRecord:
    k: np.ndarray
    proj_min: float
    proj_max: float
    full_min: float
    full_max: float
    tau: float
    sets: dict
    label: str


@dataclass
class PhaseMap:
    k0: np.ndarray
    mu: float
    records: list
    multiplicity: int

    def labels(self):
        return [r.label for r in self.records]


def _label(proj, full, tau):
    pmin, pmax = float(proj.min()), float(proj.max())
    sets = {
        "M_gt": pmax > tau,
        "M_eq": pmin <= tau and pmax >= -tau,
        "Mcal_gt": pmin > tau,
        "Mcal_eq": bool(np.all(np.abs(proj) <= tau)),
        "Mcal_lt": float(full.max()) < -tau,
    }
    if sets["Mcal_gt"]:
        label = "Mcal_gt"
    elif sets["Mcal_eq"]:
        label = "Mcal_eq"
    elif sets["Mcal_lt"]:
        label = "Mcal_lt"
    elif np.any(np.abs(proj) <= tau):
        label = "inconclusive"
    elif pmin < 0 < pmax:
        label = "M_gt&M_eq"
    else:
        label = "M_lt"
    return sets, label


def phase_map(mu, k0, potential, k_grid, eps, report=None, method=None):
    """Sign labels of ``Lambda(k, k0)`` projected on the singular eigenspace.

    Requires the threshold at ``(mu, k0)`` to be singular; points outside the
    certified region are labelled ``outside_G``.
    """
    pair0 = pair_dispersion(eps, k0)
    if report is None:
        report = classify_threshold(mu, pair0, potential)
    if not report.singular:
        raise ValueError(f"threshold at k0 is {report.status}, not singular")
    u = report.eigenspace
    records = []
    for k in np.atleast_2d(np.asarray(k_grid, dtype=float)):
        pair = pair_dispersion(eps, k)
        if not pair.certified:
            records.append(PhaseRecord(pair.k, np.nan, np.nan, np.nan, np.nan, np.nan,
                                       {n: False for n in SET_NAMES}, "outside_G"))
            continue
        lam = build_lambda(k, k0, potential, eps, mu=mu, pair_k=pair, pair_k0=pair0, method=method)
        full = np.linalg.eigvalsh(lam.matrix)
        proj = np.linalg.eigvalsh(u.T @ lam.matrix @ u)
        tau = TAU_L_REL * float(np.abs(full).max())
        sets, label = _label(proj, full, tau)
        records.append(PhaseRecord(pair.k, float(proj.min()), float(proj.max()),
                                   float(full.min()), float(full.max()), tau, sets, label))
    return PhaseMap(pair0.k, mu, records, report.multiplicity)


# ---------------------------------------------------------------------------
# threshold solutions
# ---------------------------------------------------------------------------

@dataclass
class ThresholdSolution:
    """``f(x) = sum_y G(x - y) |v(y)|^(1/2) psi(y)`` on ``[-L_f, L_f]^d``."""

    k: np.ndarray
    window: int
    points: np.ndarray
    values: np.ndarray
    decay_class: str
    residual: float
    boundary_ratio: float
    partial_l2: np.ndarray
    flags: list = field(default_factory=list)

    def value(self, x):
        idx = np.asarray(x) + self.window
        side = 2 * self.window + 1
        return float(self.values[int(np.ravel_multi_index(tuple(idx), (side,) * len(idx)))])


def _window(d, L):
    side = 2 * L + 1
    return np.indices((side,) * d).reshape(d, -1).T - L


def reconstruct_threshold_solution(report, window, index=0):
    """Threshold solution from the singular eigenvector ``psi`` of ``report``.

    Normalised to ``max |f| = 1``.  ``residual`` is the largest
    ``|(H_mu(k) f - emin f)(x)|`` over interior points; a boundary value above
    0.1 flags the window as too small.
    """
    if not report.singular:
        raise ValueError("threshold is not singular: no threshold solution")
    pair, potential, basis = report.pair, report.potential, report.basis
    d = pair.dim
    psi = basis.to_function(report.eigenspace[:, index])
    src = np.array(list(psi.keys()))
    amp = np.array([np.sqrt(abs(potential.values[tuple(y)])) * psi[tuple(y)] for y in map(tuple, src)])
    pts = _window(d, window)
    reach = window + potential.support_radius
    full = _window(d, reach)
    table = green_kernel(pair, sorted({canonical(x) for x in map(tuple, full)}), b=0.0)
    side = 2 * reach + 1
    grid = np.array([table.value(x) for x in full]).reshape((side,) * d)
    f = np.zeros(len(pts))
    for y, a in zip(src, amp):
        off = pts - y + reach
        f += a * grid[tuple(off.T)]
    scale = np.abs(f).max()
    f = f / scale
    sign = np.sign(f[np.argmax(np.abs(f))])
    f = f * sign
    side_w = 2 * window + 1
    fw = f.reshape((side_w,) * d)
    # residual of (H_mu(k) - emin) f on interior points
    coeffs = pair_fourier_coeffs(pair.base, pair.k)
    r = pair.base.support_radius
    inner = tuple(slice(r, side_w - r) for _ in range(d))
    res = np.zeros(tuple(side_w - 2 * r for _ in range(d)))
    for s, c in coeffs.items():
        sl = tuple(slice(r + sj, side_w - r + sj) for sj in s)
        res += c * fw[sl]
    vgrid = np.zeros((side_w,) * d)
    for x, v in potential.values.items():
        if max(abs(c) for c in x) <= window:
            vgrid[tuple(np.asarray(x) + window)] = report.mu * v
    res += (vgrid[inner] - pair.emin) * fw[inner]
    residual = float(np.abs(res).max())
    boundary = np.ones((side_w,) * d, dtype=bool)
    boundary[tuple(slice(1, side_w - 1) for _ in range(d))] = False
    bratio = float(np.abs(fw[boundary]).max())
    radius = np.abs(pts).max(axis=1)
    partial = np.array([np.sum(f[radius <= q] ** 2) for q in range(window + 1)])
    flags = []
    if bratio > 0.1:
        flags.append(f"window too small: boundary value {bratio:.3f} > 0.1 max|f|")
    decay = "vanishing-at-infinity" if d in (3, 4) else "square-summable"
    return ThresholdSolution(pair.k, window, pts, f, decay, residual, bratio, partial, flags)


# ---------------------------------------------------------------------------
# stability near regular points
# ---------------------------------------------------------------------------

def threshold_count(mu, pair, potential, basis=None):
    """Number of eigenvalues below ``emin(k)``: ``#{mu lambda_i(B_1(k, emin)) > 1}``."""
    rep = classify_threshold(mu, pair, potential, basis=basis)
    return int(np.sum(rep.eigenvalues > 1.0 + rep.tau_sing)), rep


def _directions(d):
    dirs = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        dirs += [e, -e]
    for signs in itertools.product((-1.0, 1.0), repeat=d):
        dirs.append(np.asarray(signs) / np.sqrt(d))
    return dirs


@dataclass
class StabilityReport:
    mu0: float
    k0: np.ndarray
    count: int
    k_radius: float
    mu_radius: float
    checked: int
    falsifications: list


def stability_scan(mu0, k0, potential, eps, k_radii=(0.05, 0.1, 0.2, 0.3),
                   mu_radii=(0.01, 0.05, 0.1)):
    """Check that the bound-state count stays constant near a regular point.

    Shells ``|k - k0| = r`` (axis and diagonal directions) at ``mu0``, couplings
    ``mu0 +- r``, and their combinations at the verified radii are scanned.
    Returns the largest radius in each list up to which no change was seen,
    plus every offending point.
    """
    pair0 = pair_dispersion(eps, k0)
    basis = build_even_basis(potential)
    n0, rep0 = threshold_count(mu0, pair0, potential, basis)
    if rep0.status != "regular":
        raise ValueError(f"stability scan needs a regular threshold, got {rep0.status}")
    bad, checked = [], 0

    def probe(mu, k):
        nonlocal checked
        pair = pair_dispersion(eps, k)
        if not pair.certified:
            return True
        checked += 1
        n, rep = threshold_count(mu, pair, potential, basis)
        if n != n0 or rep.status != "regular":
            bad.append({"mu": float(mu), "k": [float(c) for c in pair.k], "count": n,
                        "status": rep.status})
            return False
        return True

    k_ok = 0.0
    for r in sorted(k_radii):
        if not all([probe(mu0, pair0.k + r * u) for u in _directions(eps.dim)]):
            break
        k_ok = r
    mu_ok = 0.0
    for r in sorted(mu_radii):
        if not all([probe(mu0 + sgn * r, pair0.k) for sgn in (-1.0, 1.0) if mu0 + sgn * r > 0]):
            break
        mu_ok = r
    if k_ok > 0 and mu_ok > 0:
        joint = all([probe(mu0 + sgn * mu_ok, pair0.k + k_ok * u)
                     for sgn in (-1.0, 1.0) for u in _directions(eps.dim)])
        if not joint:
            k_ok = mu_ok = 0.0
    return StabilityReport(mu0, pair0.k, n0, k_ok, mu_ok, checked, bad)


def emission_check(mu, eps, potential, ks):
    """Bound-state counts at the given quasi-momenta (used after a phase map)."""
    out = []
    for k in ks:
        pair = pair_dispersion(eps, k)
        try:
            out.append(solve_bound_states(mu, pair, potential).count)
        except GreenError as exc:
            out.append(str(exc))
    return out
