"""Brute-force ground truth.

``box_spectrum`` diagonalises the fibre Hamiltonian compressed to the even
functions on ``[-L, L]^d`` (hard walls).  Compression can only raise
eigenvalues, so box counts below any ``z`` never exceed the true counts.

``periodic_fiber_check`` verifies, on an ``N``-periodic chain, that the full
two-body spectrum is the union of the spectra of the ``N`` fibre operators.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh, splu

from .model import eval_dispersion, pair_dispersion, pair_fourier_coeffs

DEFAULT_MAX_BASIS = 100000
DENSE_LIMIT = 1500
L_MAX = {1: 200, 2: 200, 3: 20}


class OracleError(RuntimeError):
    """Basis too large, precondition not met, or decomposition mismatch."""


@dataclass
class BoxSpectrum:
    """Box eigenvalues below ``complete_to`` (every eigenvalue below it is listed);
    ``bound`` are those below ``emin``."""

    k: np.ndarray
    mu: float
    L: int
    size: int
    emin: float
    eigenvalues: np.ndarray
    complete_to: float

    @property
    def bound(self):
        return self.eigenvalues[self.eigenvalues < self.emin]

    def count_below(self, z):
        if z > self.complete_to:
            raise ValueError(f"spectrum only complete below {self.complete_to}")
        return int(np.sum(self.eigenvalues < z))


def _positive_orbits(d, L):
    """Nonzero points of the box whose first nonzero component is positive."""
    side = 2 * L + 1
    grid = np.indices((side,) * d).reshape(d, -1).T - L
    first = grid[np.arange(len(grid)), (grid != 0).argmax(axis=1)]
    return grid[first > 0]


def _code(pts, L):
    side = 2 * L + 1
    return ((pts + L) * side ** np.arange(pts.shape[1])).sum(axis=1)


def _canon(pts):
    nz = pts != 0
    first = np.where(nz.any(axis=1), pts[np.arange(len(pts)), nz.argmax(axis=1)], 1)
    return pts * np.sign(first)[:, None]


def box_matrix(eps, k, mu, potential, L):
    """Sparse even-sector box Hamiltonian and its orbit representatives."""
    d = eps.dim
    nz0 = np.zeros((1, d), dtype=int)
    reps = np.vstack([nz0, _positive_orbits(d, L)])
    n = len(reps)
    lookup = np.full((2 * L + 1) ** d, -1, dtype=np.int64)
    lookup[_code(reps, L)] = np.arange(n)
    size = np.where(np.any(reps != 0, axis=1), 2.0, 1.0)
    rows, cols, vals = [], [], []
    for s, c in pair_fourier_coeffs(eps, k).items():
        if c == 0.0:
            continue
        a = reps + np.asarray(s)
        inside = np.all(np.abs(a) <= L, axis=1)
        j = np.flatnonzero(inside)
        i = lookup[_code(_canon(a[inside]), L)]
        rows.append(i)
        cols.append(j)
        vals.append(c * np.sqrt(size[j] / size[i]))
    for x, v in potential.values.items():
        x = np.asarray(x)
        if np.all(np.abs(x) <= L):
            i = lookup[_code(_canon(x[None, :]), L)][0]
            if tuple(reps[i]) == tuple(x):
                rows.append(np.array([i]))
                cols.append(np.array([i]))
                vals.append(np.array([mu * v]))
    mat = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n)).tocsr()
    return mat, reps


def inertia_count(mat, z):
    """Number of eigenvalues of the sparse symmetric ``mat`` below ``z``.

    Sylvester's law of inertia applied to an LDL^T-type factorisation: SuperLU
    with a symmetric fill-reducing ordering and diagonal pivoting only.  If
    the factorisation had to pivot off the diagonal (an exactly singular
    leading block), ``z`` is nudged by a relative 1e-14 and retried.
    """
    n = mat.shape[0]
    eye = sparse.identity(n, format="csc")
    for attempt in range(4):
        shift = z + attempt * 1e-14 * max(1.0, abs(z))
        lu = splu((mat - shift * eye).tocsc(), permc_spec="MMD_AT_PLUS_A",
                  diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        if np.array_equal(lu.perm_r, lu.perm_c):
            return int(np.sum(lu.U.diagonal() < 0))
    raise OracleError("inertia count failed: factorisation pivoted off the diagonal")


def box_spectrum(eps, k, mu, potential, L, margin=0.5, max_basis=DEFAULT_MAX_BASIS):
    """Eigenvalues of the box Hamiltonian below the threshold (and up to
    ``emin + margin`` for boxes small enough for the dense solver).

    Large boxes locate the sub-threshold eigenvalues by shift-invert Lanczos
    and confirm their number by an inertia count.
    """
    pair = pair_dispersion(eps, k)
    need = potential.support_radius + eps.support_radius
    if L < need:
        raise OracleError(f"box radius {L} smaller than the combined support radius {need}")
    n_est = ((2 * L + 1) ** eps.dim + 1) // 2
    if n_est > max_basis:
        raise OracleError(f"basis size {n_est} exceeds the cap {max_basis}")
    mat, _ = box_matrix(eps, pair.k, mu, potential, L)
    n = mat.shape[0]
    asym = abs(mat - mat.T).max() if n else 0.0
    if asym > 1e-12:
        raise OracleError(f"box matrix not symmetric ({asym:.2e})")
    low = pair.emin - mu * potential.max_abs - 1.0
    if n <= DENSE_LIMIT:
        top = pair.emin + margin
        w = linalg.eigh(mat.toarray(), eigvals_only=True, subset_by_value=(low, top),
                        driver="evr")
        return BoxSpectrum(pair.k, mu, L, n, pair.emin, np.sort(w), top)
    nb = inertia_count(mat, pair.emin)
    if nb == 0:
        return BoxSpectrum(pair.k, mu, L, n, pair.emin, np.zeros(0), pair.emin)
    w = eigsh(mat.tocsc(), k=nb, sigma=low, which="LM", return_eigenvectors=False, tol=1e-13)
    w = np.sort(w)
    if np.any(w >= pair.emin):
        raise OracleError("shift-invert eigenvalues inconsistent with the inertia count")
    return BoxSpectrum(pair.k, mu, L, n, pair.emin, w, pair.emin)


@dataclass
class Convergence:
    """Outcome of the box-size doubling rule."""

    L: int
    error: float
    converged: bool
    spectrum: BoxSpectrum
    history: list = field(default_factory=list)
    note: str = ""


def convergence_rule(eps, k, mu, potential, L0=None, tol=1e-9, L_max=None,
                     max_basis=DEFAULT_MAX_BASIS, require_bound=True):
    """Double ``L`` until the lowest box eigenvalue moves by less than ``tol``.

    Stops at ``L_max`` (200 for d = 1, 2; 20 for d = 3) or when the next box
    would exceed the basis cap; the last change is the error estimate.
    Raises :class:`OracleError` when no bound state is present, unless
    ``require_bound`` is false (then the largest box is returned unconverged).
    """
    d = eps.dim
    if L_max is None:
        L_max = L_MAX.get(d, 8)
    if L0 is None:
        L0 = max(4, potential.support_radius + eps.support_radius + 2)
    history = []
    L = min(L0, L_max)
    prev = None
    spec = None
    while True:
        spec = box_spectrum(eps, k, mu, potential, L, max_basis=max_basis)
        low = spec.eigenvalues[0] if spec.eigenvalues.size else np.inf
        history.append((L, float(low)))
        if prev is not None and np.isfinite(low) and abs(low - prev) < tol:
            return Convergence(L, abs(low - prev), True, spec, history)
        nxt = min(2 * L, L_max)
        if nxt == L or ((2 * nxt + 1) ** d + 1) // 2 > max_basis:
            break
        prev, L = low, nxt
    if not spec.bound.size and require_bound:
        raise OracleError(f"no eigenvalue below the threshold up to L={L}: no bound state")
    err = abs(history[-1][1] - history[-2][1]) if len(history) > 1 else np.inf
    return Convergence(L, err, False, spec, history,
                       note=f"not converged by L={L} (shallow state near threshold?)")


# ---------------------------------------------------------------------------
# periodic two-body model
# ---------------------------------------------------------------------------

@dataclass
class FiberCheck:
    N: int
    full: np.ndarray
    fibers: dict
    max_deviation: float
    dims: dict

    @property
    def union(self):
        return np.sort(np.concatenate(list(self.fibers.values())))

    @property
    def ok(self):
        return self.max_deviation <= 1e-10 and sum(self.dims.values()) == self.N * (self.N + 1) // 2


def _periodized(potential, N):
    vn = np.zeros(N)
    for x, v in potential.values.items():
        vn[x[0] % N] += v
    return vn


def _one_body(eps, N):
    h = np.zeros((N, N))
    for s, c in eps.full_coeffs().items():
        for x in range(N):
            h[x, (x + s[0]) % N] += c
    return h


def full_two_body(eps, N, mu, potential):
    """Symmetric-sector two-body Hamiltonian on ``Z_N x Z_N``."""
    h = _one_body(eps, N)
    eye = np.eye(N)
    big = np.kron(h, eye) + np.kron(eye, h)
    vn = _periodized(potential, N)
    x1, x2 = np.divmod(np.arange(N * N), N)
    big += np.diag(mu * vn[(x1 - x2) % N])
    cols = []
    for a in range(N):
        for b in range(a, N):
            u = np.zeros(N * N)
            u[a * N + b] += 1.0
            u[b * N + a] += 1.0
            cols.append(u / np.linalg.norm(u))
    sym = np.array(cols).T
    return sym.T @ big @ sym


def fiber_matrix(eps, N, j, mu, potential):
    """Fibre operator at ``k = 2 pi j / N`` on its even (boson) subspace."""
    k = 2 * np.pi * j / N
    twist = -1.0 if j % 2 else 1.0
    h = np.zeros((N, N))
    for s, c in eps.full_coeffs().items():
        e = 2.0 * c * math.cos(0.5 * k * s[0])
        for r in range(N):
            q, t = divmod(r + s[0], N)
            h[r, t] += e * twist**q
    h += np.diag(mu * _periodized(potential, N))
    parity = np.zeros((N, N))
    parity[0, 0] = 1.0
    for r in range(1, N):
        parity[r, N - r] = twist
    w, v = np.linalg.eigh(parity)
    even = v[:, w > 0.5]
    return even.T @ h @ even


def periodic_fiber_check(eps, N, mu, potential, tol=1e-10):
    """Compare the periodic two-body spectrum with the union of fibre spectra.

    Raises :class:`OracleError` on any mismatch beyond ``tol`` (the
    decomposition is exact on the periodic lattice).
    """
    if eps.dim != 1:
        raise ValueError("periodic fibre check is one-dimensional")
    if N > 12 or N < 2:
        raise ValueError("N must be between 2 and 12")
    full = np.linalg.eigvalsh(full_two_body(eps, N, mu, potential))
    fibers, dims = {}, {}
    for j in range(N):
        m = fiber_matrix(eps, N, j, mu, potential)
        fibers[j] = np.linalg.eigvalsh(m)
        dims[j] = m.shape[0]
    union = np.sort(np.concatenate(list(fibers.values())))
    if union.size != full.size:
        raise OracleError(f"dimension mismatch: fibres {union.size} vs full {full.size}")
    dev = float(np.max(np.abs(union - np.sort(full))))
    report = FiberCheck(N, np.sort(full), fibers, dev, dims)
    if dev > tol:
        raise OracleError(f"fibre decomposition mismatch {dev:.2e} > {tol:.0e}")
    return report


def free_band_check(eps, N):
    """Free single-particle eigenvalues on ``Z_N`` equal ``eps(2 pi j / N)``."""
    h = _one_body(eps, N)
    grid = 2 * np.pi * np.arange(N)[:, None] / N
    return float(np.max(np.abs(np.sort(np.linalg.eigvalsh(h)) - np.sort(eval_dispersion(eps, grid)))))
