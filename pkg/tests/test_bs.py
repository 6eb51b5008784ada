import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latthresh.bs import (NearCriticalWarning, build_bs_matrix, build_even_basis, count_above_one,
                          critical_coupling, dispersion_sweep, solve_bound_states, unit_matrix)
from latthresh.green import green_kernel
from latthresh.model import Potential, laplacian_dispersion, pair_dispersion

W3 = 0.25273100985866015
REF3_K100 = 0.26379701646642245
# converged box-oracle value (L = 16) for d=3, k=(0.5,0.2,0), mu=8, v = -d0 - 0.5 d(+-e1)
BOX_DEEP = -2.9799987573981443
THREE3 = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5})


def test_even_basis_examples():
    assert build_even_basis(Potential.delta(3)).reps == ((0, 0, 0),)
    b = build_even_basis(Potential(1, {(0,): -1.0, (1,): -1.0}))
    assert b.reps == ((0,), (1,)) and b.size == 2
    assert b.weights[0] == pytest.approx(1 / math.sqrt(2)) and b.weights[1] == 1.0
    assert build_even_basis(Potential(2, {(0, 0): -1, (1, 0): -1, (0, 1): -1})).size == 3
    with pytest.raises(ValueError):
        build_even_basis(Potential(2, {(0, 0): 0.0}))


def test_rank_one_matrix():
    pair = pair_dispersion(laplacian_dispersion(1), [0.0])
    bs = build_bs_matrix(1.0, pair, z=-0.5, potential=Potential.delta(1))
    assert bs.entries.shape == (1, 1)
    assert bs.lambda_max == pytest.approx(1 / math.sqrt(2.25), abs=1e-13)
    assert count_above_one(bs) == 0
    bs = build_bs_matrix(1.0, pair, z=2 - math.sqrt(5) + 1e-6, potential=Potential.delta(1))
    assert count_above_one(bs) == 1


def test_scaling_and_symmetry(pair3):
    pot = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5, (0, 1, 1): -0.2})
    b1 = build_bs_matrix(1.0, pair3, z=-0.3, potential=pot)
    b7 = build_bs_matrix(7.0, pair3, z=-0.3, potential=pot)
    assert np.allclose(b7.eigs, 7 * b1.eigs, rtol=1e-14, atol=0)
    assert np.array_equal(b1.entries, b1.entries.T)
    assert np.all(b1.eigs >= -1e-10 * b1.eigs[0])
    assert np.all(np.diff(b1.eigs) <= 0)


def test_even_basis_matches_parity_projection(lap3):
    pot = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5, (1, 1, 0): -0.25, (0, 2, 1): -0.1})
    pair = pair_dispersion(lap3, [0.3, 0.1, -0.4])
    z = pair.emin - 0.2
    bs = build_bs_matrix(1.0, pair, z=z, potential=pot)
    sup = list(pot.values)
    n = len(sup)
    offs = {tuple(np.subtract(a, b)) for a in sup for b in sup}
    g = green_kernel(pair, sorted(offs), b=0.2)
    sq = np.sqrt(np.abs([pot.values[x] for x in sup]))
    full = np.array([[sq[i] * sq[j] * g.value(np.subtract(sup[i], sup[j])) for j in range(n)]
                     for i in range(n)])
    par = np.zeros((n, n))
    for i, x in enumerate(sup):
        par[i, sup.index(tuple(-c for c in x))] = 1.0
    proj = 0.5 * (np.eye(n) + par)
    w, v = np.linalg.eigh(proj)
    even = v[:, w > 0.5]
    ref = np.sort(np.linalg.eigvalsh(even.T @ full @ even))[::-1]
    assert np.allclose(bs.eigs, ref, atol=1e-12)


def test_near_critical_warning():
    pair = pair_dispersion(laplacian_dispersion(1), [0.0])
    bs = build_bs_matrix(1.0, pair, z=2 - math.sqrt(5), potential=Potential.delta(1))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        count_above_one(bs)
        assert any(issubclass(x.category, NearCriticalWarning) for x in w)


def test_one_d_bound_states():
    eps = laplacian_dispersion(1)
    st0 = solve_bound_states(1.0, pair_dispersion(eps, [0.0]), Potential.delta(1))
    assert st0.count == 1 and st0.energies[0] == pytest.approx(2 - math.sqrt(5), abs=1e-10)
    assert st0.residuals[0] < 1e-9
    for k in (0.3, -1.7, 2.9):
        st = solve_bound_states(1.0, pair_dispersion(eps, [k]), Potential.delta(1))
        assert st.energies[0] == pytest.approx(2 - math.sqrt(4 * math.cos(k / 2) ** 2 + 1), abs=1e-10)


def test_d3_subcritical_empty(pair3, delta3):
    assert solve_bound_states(2.0, pair3, delta3).count == 0


def test_d3_against_box_oracle(lap3):
    st = solve_bound_states(8.0, pair_dispersion(lap3, [0.5, 0.2, 0.0]), THREE3)
    assert st.count == 1
    assert st.energies[0] == pytest.approx(BOX_DEEP, abs=1e-9)


def test_d3_mu5_below_box_value(pair3, delta3):
    st = solve_bound_states(5.0, pair3, delta3)
    box16 = -0.4007907344726487  # L = 16 box, an upper bound converging from above
    assert st.count == 1 and st.energies[0] <= box16 and box16 - st.energies[0] < 6e-6


def test_critical_coupling(pair3, delta3, lap3):
    cc = critical_coupling(pair3, delta3)
    assert len(cc) == 1 and cc[0] == pytest.approx(1 / W3, abs=1e-9)
    assert cc[0] == pytest.approx(3.95678, abs=2e-4)
    ck = critical_coupling(pair_dispersion(lap3, [1.0, 0, 0]), delta3)
    assert ck[0] == pytest.approx(1 / REF3_K100, abs=1e-9) and ck[0] < cc[0]
    pot = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5, (0, 1, 0): -0.3})
    multi = critical_coupling(pair3, pot)
    assert len(multi) == 3 and np.all(np.diff(multi.mu_star) >= 0)


def test_critical_coupling_decreases_with_k(lap3, delta3):
    vals = [critical_coupling(pair_dispersion(lap3, [t, 0, 0]), delta3)[0] for t in (0, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(vals) < 0)


def test_eigenvalue_count_above_critical(pair3):
    pot = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5, (0, 1, 0): -0.3})
    cc = critical_coupling(pair3, pot)
    for i, m in enumerate(cc.mu_star):
        assert solve_bound_states(m * 1.05, pair3, pot).count >= i + 1


def test_weak_coupling_existence_low_dim():
    for d in (1, 2):
        for c in (0.0, 1.0, 2.0):
            st = solve_bound_states(1.0, pair_dispersion(laplacian_dispersion(d), [c] * d),
                                    Potential.delta(d, 1e-3))
            assert st.count == 1
    st = solve_bound_states(1.0, pair_dispersion(laplacian_dispersion(2), [0, 0]),
                            Potential.delta(2, 1e-3))
    # G(b; 0) ~ (log 32 - log b) / (4 pi) as b -> 0
    assert st.log_bindings[0] == pytest.approx(math.log(32) - 4000 * math.pi, abs=1e-6)


@given(st.floats(1.0, 6.0))
@settings(max_examples=15, deadline=None)
def test_existence_d3_criterion(scale):
    mu = scale / W3 * 1.01
    pair = pair_dispersion(laplacian_dispersion(3), [0, 0, 0])
    assert solve_bound_states(mu, pair, Potential.delta(3)).count >= 1


def test_lambda_monotone_in_z(pair3):
    pot = Potential(3, {(0, 0, 0): -1.0, (1, 0, 0): -0.5, (0, 1, 0): -0.3})
    basis = build_even_basis(pot)
    prev = None
    for b in np.geomspace(3.0, 1e-3, 15):
        eig = np.linalg.eigvalsh(unit_matrix(pair3, basis, b=b)[0])
        if prev is not None:
            assert np.all(eig >= prev - 1e-13) and eig[-1] > prev[-1]
        prev = eig


def test_sweep_consistency():
    eps = laplacian_dispersion(1)
    ks = np.linspace(-np.pi, np.pi, 35)[1:-1][:, None]
    rows = dispersion_sweep(1.0, eps, Potential.delta(1), ks)
    z = np.array([r.states.energies[0] for r in rows])
    exact = 2 - np.sqrt(4 * np.cos(ks[:, 0] / 2) ** 2 + 1)
    assert np.max(np.abs(z - exact)) < 1e-9
    mid = rows[16]
    assert mid.k[0] == 0.0
    direct = solve_bound_states(1.0, pair_dispersion(eps, [0.0]), Potential.delta(1))
    assert mid.states.energies[0] == direct.energies[0]
    # two-sided bounds for a cnd band
    e0 = rows[16].emin
    for r, zk in zip(rows, z):
        if r.k[0] != 0:
            assert z[16] < zk < z[16] + (r.emin - e0)


def test_sweep_threads_identical(lap3, delta3):
    ks = [[0, 0, 0], [0.5, 0, 0], [1.0, 1.0, 0]]
    a = dispersion_sweep(6.0, lap3, delta3, ks, threads=1)
    b = dispersion_sweep(6.0, lap3, delta3, ks, threads=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.states.energies, y.states.energies)


def test_strict_k_monotonicity_d2():
    eps = laplacian_dispersion(2)
    pot = Potential(2, {(0, 0): -1.0, (1, 0): -0.5})
    z0 = solve_bound_states(3.0, pair_dispersion(eps, [0, 0]), pot).energies[0]
    for k in ([0.3, 0], [0, 0.3], [1.0, -2.0], [2.5, 2.5]):
        zk = solve_bound_states(3.0, pair_dispersion(eps, k), pot).energies[0]
        assert zk > z0


def test_rank_bound():
    eps = laplacian_dispersion(2)
    pot = Potential(2, {(0, 0): -1.0, (1, 0): -1.0, (0, 1): -1.0})
    for mu in (0.5, 5.0, 50.0):
        st = solve_bound_states(mu, pair_dispersion(eps, [0.2, 0.1]), pot)
        assert st.count <= st.basis_size == 3
