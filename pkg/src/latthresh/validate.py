"""Acceptance checks shared by ``lattice-threshold validate`` and the test suite.

Each ``criterion_N`` returns a :class:`CriterionResult`; ``passed`` includes
the runtime limit.  Numerical targets are fixed here, not read from the
run configuration.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bs import build_bs_matrix, build_even_basis, count_above_one, critical_coupling, \
    dispersion_sweep, solve_bound_states
from .green import green_bessel, green_extrapolation, green_subtraction
from .model import Potential, laplacian_dispersion, pair_dispersion
from .oracle import OracleError, convergence_rule, periodic_fiber_check
from .threshold import classify_threshold, phase_map, reconstruct_threshold_solution, \
    stability_scan

WATSON_G0 = 0.25273101
SQRT5 = math.sqrt(5.0)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime: float
    limit: float
    detail: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.number} [{tag}] {self.title} "
                f"({self.runtime:.2f} s, limit {self.limit:g} s)")

    def as_dict(self):
        return {"number": self.number, "title": self.title, "passed": bool(self.passed),
                "runtime": round(self.runtime, 3), "limit": self.limit, "detail": self.detail}


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# every bound-state count produced by the suite, for the rank bound
RANK_LOG = []


def _solve(mu, pair, potential, **kw):
    states = solve_bound_states(mu, pair, potential, **kw)
    RANK_LOG.append((states.count, states.basis_size))
    return states


def potential_family(dim):
    """Delta, three-point and five-point attractive potentials."""
    o = (0,) * dim
    e1 = tuple(1 if j == 0 else 0 for j in range(dim))
    if dim == 1:
        e2 = (2,)
    else:
        e2 = tuple(1 if j == 1 else 0 for j in range(dim))
    three = {o: -1.0, e1: -0.5}
    five = {o: -1.0, e1: -0.5, e2: -0.25}
    return {"delta": Potential.delta(dim, 1.0), "three": Potential(dim, three),
            "five": Potential(dim, five)}


def one_d_closed_form(k, mu=1.0):
    return 2.0 - math.sqrt(4.0 * math.cos(0.5 * k) ** 2 + mu * mu)


# ---------------------------------------------------------------------------

def criterion_1():
    eps = laplacian_dispersion(1)
    v = Potential.delta(1, 1.0)
    exact = 2.0 - SQRT5
    with _Timer() as t:
        states = _solve(1.0, pair_dispersion(eps, [0.0]), v)
        conv = convergence_rule(eps, [0.0], 1.0, v)
    z_bs = float(states.energies[0]) if states.count == 1 else float("nan")
    z_box = float(conv.spectrum.bound[0]) if conv.spectrum.bound.size else float("nan")
    ok = (states.count == 1 and abs(z_bs - exact) <= 1e-9 and abs(z_box - exact) <= 1e-7
          and conv.converged)
    return CriterionResult(1, "1D closed form 2 - sqrt(5)", ok and t.elapsed < 1.0, t.elapsed, 1.0,
                           {"z_bs": z_bs, "z_box": z_box, "exact": exact, "box_L": conv.L,
                            "err_bs": abs(z_bs - exact), "err_box": abs(z_box - exact)})


def criterion_2():
    eps = laplacian_dispersion(1)
    v = Potential.delta(1, 1.0)
    ks = np.linspace(-np.pi, np.pi, 35)[1:-1]  # 33 points, the flat-band edge k = pi excluded
    with _Timer() as t:
        rows = dispersion_sweep(1.0, eps, v, ks[:, None])
    for r in rows:
        if r.states is not None:
            RANK_LOG.append((r.states.count, r.states.basis_size))
    worst, bad_bounds = 0.0, []
    z0 = one_d_closed_form(0.0)
    e0 = 0.0
    for k, r in zip(ks, rows):
        if r.states is None or r.states.count != 1:
            worst = float("inf")
            continue
        z = float(r.states.energies[0])
        worst = max(worst, abs(z - one_d_closed_form(k)))
        if abs(k) > 1e-12 and not (z0 < z < z0 + (r.emin - e0)):
            bad_bounds.append(float(k))
    ok = worst <= 1e-9 and not bad_bounds
    return CriterionResult(2, "1D dispersion curve and two-sided bounds", ok and t.elapsed < 5.0,
                           t.elapsed, 5.0, {"points": len(ks), "max_error": worst,
                                            "bound_violations": bad_bounds})


def criterion_3():
    eps = laplacian_dispersion(3)
    pair = pair_dispersion(eps, [0.0, 0.0, 0.0])
    o = [(0, 0, 0)]
    with _Timer() as t:
        tabs = {"bessel": green_bessel(pair, o), "subtraction": green_subtraction(pair, o),
                "extrapolation": green_extrapolation(pair, o)}
        cc = critical_coupling(pair, Potential.delta(3, 1.0))
    vals = {m: tab.value(o[0]) for m, tab in tabs.items()}
    errs = {m: tab.error(o[0]) for m, tab in tabs.items()}
    near = all(abs(v - WATSON_G0) <= 1e-6 for v in vals.values())
    names = list(vals)
    agree = all(abs(vals[a] - vals[b]) <= errs[a] + errs[b] + 1e-15
                for i, a in enumerate(names) for b in names[i + 1:])
    mu_star = float(cc.mu_star[0])
    ok = near and agree and abs(mu_star - 3.95678) <= 2e-4
    return CriterionResult(3, "Watson constant and critical coupling", ok and t.elapsed < 30.0,
                           t.elapsed, 30.0, {"values": vals, "errors": errs, "mu_star": mu_star,
                                             "within_1e-6": near, "methods_agree": agree})


CRIT4_MU = {1: (0.5, 1.0, 3.0), 2: (1.0, 3.0, 6.0), 3: (2.0, 8.0, 14.0)}
CRIT4_K = {
    1: ([0.0], [0.5], [1.0], [2.0], [3.0]),
    2: ([0.0, 0.0], [0.5, 0.0], [1.0, 0.5], [2.0, 1.0], [2.5, 2.5]),
    3: ([0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.5, 0.0], [2.0, 1.0, 0.5], [2.5, 2.5, 2.5]),
}
CRIT4_BMIN = {1: 0.01, 2: 0.01, 3: 0.02}
CRIT4_CAP = {1: 1000, 2: 100000, 3: 20000}


def z_ladder(pair, mu, potential, n=20, b_min=0.01):
    """Geometric binding ladder from below the spectrum's lower bound to ``b_min``."""
    b_max = mu * potential.max_abs + 0.5
    return pair.emin - np.geomspace(b_max, b_min, n)


def bs_oracle_cell(eps, potential, mu, k, n=20, b_min=0.01, max_basis=100000):
    """Compare ``N_+(1, B(k, z))`` with box counts below ``z`` on a z-ladder."""
    pair = pair_dispersion(eps, k)
    basis = build_even_basis(potential)
    conv = convergence_rule(eps, k, mu, potential, max_basis=max_basis, require_bound=False)
    out = []
    for z in z_ladder(pair, mu, potential, n, b_min):
        bs = build_bs_matrix(mu, pair, z=z, potential=potential, basis=basis)
        out.append((float(z), count_above_one(bs), conv.spectrum.count_below(z)))
    return out, conv


def criterion_4(dims=(1, 2, 3)):
    mismatches, cells, info = [], 0, []
    with _Timer() as t:
        for d in dims:
            eps = laplacian_dispersion(d)
            for pname, pot in potential_family(d).items():
                for mu in CRIT4_MU[d]:
                    for k in CRIT4_K[d]:
                        rows, conv = bs_oracle_cell(eps, pot, mu, k, b_min=CRIT4_BMIN[d],
                                                    max_basis=CRIT4_CAP[d])
                        info.append({"d": d, "potential": pname, "mu": mu, "k": list(k),
                                     "L": conv.L, "converged": conv.converged,
                                     "box_error": conv.error})
                        for z, n_bs, n_box in rows:
                            cells += 1
                            if n_bs != n_box:
                                mismatches.append({"d": d, "potential": pname, "mu": mu,
                                                   "k": list(k), "z": z, "bs": n_bs,
                                                   "box": n_box, "L": conv.L})
    ok = not mismatches
    return CriterionResult(4, "BS counts equal box-oracle counts", ok and t.elapsed < 600.0,
                           t.elapsed, 600.0, {"cells": cells, "mismatches": mismatches,
                                              "boxes": info})


def criterion_5(seed=0):
    eps = laplacian_dispersion(3)
    v = Potential.delta(3, 1.0)
    zero = [0.0, 0.0, 0.0]
    detail = {}
    with _Timer() as t:
        pair0 = pair_dispersion(eps, zero)
        mu_star = float(critical_coupling(pair0, v).mu_star[0])
        rep = classify_threshold(mu_star, pair0, v)
        detail["classify"] = [rep.status, rep.kind, rep.multiplicity]
        axis = (-0.6, 0.0, 0.6)
        grid = np.array([g for g in np.ndindex(3, 3, 3)], dtype=float)
        grid = np.array([[axis[int(i)] for i in g] for g in grid])
        pm = phase_map(mu_star, zero, v, grid, eps, report=rep)
        nonzero = [r for r in pm.records if np.any(r.k != 0)]
        labels_ok = all(r.label == "Mcal_gt" for r in nonzero)
        at_k0 = [r.label for r in pm.records if not np.any(r.k != 0)]
        detail["labels_nonzero"] = sorted({r.label for r in nonzero})
        detail["label_k0"] = at_k0
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(nonzero), size=5, replace=False)
        counts = []
        for i in sorted(picks):
            k = nonzero[i].k
            counts.append(_solve(mu_star, pair_dispersion(eps, k), v).count)
        detail["emission_counts"] = counts
        mu_reg = 0.9 * mu_star
        reg = classify_threshold(mu_reg, pair0, v)
        scan = stability_scan(mu_reg, zero, v, eps)
        detail["regular"] = reg.status
        detail["scan"] = {"count": scan.count, "k_radius": scan.k_radius,
                          "mu_radius": scan.mu_radius, "falsifications": scan.falsifications}
    ok = (rep.status == "singular" and rep.kind == "resonance" and rep.multiplicity == 1
          and labels_ok and at_k0 == ["Mcal_eq"] and counts == [1] * 5
          and reg.status == "regular" and scan.count == 0
          and scan.k_radius >= 0.2 and scan.mu_radius >= 0.05)
    return CriterionResult(5, "threshold dichotomy and emission", ok and t.elapsed < 300.0,
                           t.elapsed, 300.0, detail)


def criterion_6():
    """Rank bound on everything this process has solved, plus a strong-coupling sweep."""
    with _Timer() as t:
        for d, ks in ((1, ([0.0], [2.0])), (2, ([0.0, 0.0], [2.0, 1.0])), (3, ([0.0, 0.0, 0.0], [1.0, 0.5, 0.0]))):
            eps = laplacian_dispersion(d)
            for pot in potential_family(d).values():
                for k in ks:
                    _solve(30.0, pair_dispersion(eps, k), pot)
    bad = [(c, m) for c, m in RANK_LOG if c > m]
    ok = not bad and len(RANK_LOG) > 0
    return CriterionResult(6, "bound-state count <= even-basis size", ok, t.elapsed, float("inf"),
                           {"runs": len(RANK_LOG), "violations": bad,
                            "saturated": sum(1 for c, m in RANK_LOG if c == m)})


def criterion_7():
    found = {}
    with _Timer() as t:
        for d in (1, 2):
            eps = laplacian_dispersion(d)
            v = Potential.delta(d, 1e-3)
            for c in (0.0, 1.0, 2.0):
                st = _solve(1.0, pair_dispersion(eps, [c] * d), v)
                found[f"d={d},k={c}"] = {"count": st.count,
                                         "log_binding": [float(x) for x in st.log_bindings]}
    ok = all(f["count"] >= 1 for f in found.values())
    return CriterionResult(7, "existence in d = 1, 2 for weak coupling", ok and t.elapsed < 120.0,
                           t.elapsed, 120.0, found)


def criterion_8():
    eps = laplacian_dispersion(1)
    with _Timer() as t:
        try:
            rep = periodic_fiber_check(eps, 8, 1.0, Potential.delta(1, 1.0))
            ok, dev, sizes = rep.ok, rep.max_deviation, [rep.full.size, rep.union.size]
        except OracleError as exc:
            ok, dev, sizes = False, str(exc), []
    return CriterionResult(8, "periodic direct-integral decomposition", ok and t.elapsed < 10.0,
                           t.elapsed, 10.0, {"max_deviation": dev, "sizes": sizes})


def _decay_exponent(partial):
    """Power ``p`` with shell increments of the partial l2 sums ~ r^p (outer half)."""
    inc = np.diff(partial)
    r = np.arange(1, len(partial))
    half = r >= max(2, len(r) // 2)
    return float(np.polyfit(np.log(r[half]), np.log(inc[half]), 1)[0])


def criterion_9():
    detail = {}
    with _Timer() as t:
        sols = {}
        for d, window in ((3, 12), (5, 5)):
            eps = laplacian_dispersion(d)
            v = Potential.delta(d, 1.0)
            pair = pair_dispersion(eps, [0.0] * d)
            mu = float(critical_coupling(pair, v).mu_star[0])
            rep = classify_threshold(mu, pair, v)
            sol = reconstruct_threshold_solution(rep, window)
            sols[d] = sol
            detail[f"d={d}"] = {"status": rep.status, "residual": sol.residual,
                                "decay_class": sol.decay_class, "flags": sol.flags,
                                "l2_shell_exponent": _decay_exponent(sol.partial_l2)}
    s3, s5 = sols[3], sols[5]
    ok = (s3.residual <= 1e-6 and s5.residual <= 1e-6 and not s3.flags
          and s3.decay_class == "vanishing-at-infinity" and s5.decay_class == "square-summable"
          and detail["d=3"]["l2_shell_exponent"] > -1.0 and detail["d=5"]["l2_shell_exponent"] < -1.0)
    return CriterionResult(9, "threshold-solution residual and decay class", ok, t.elapsed,
                           float("inf"), detail)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_all(numbers=None, echo=None):
    """Run the criteria in order (6 last, so it audits every other run)."""
    numbers = sorted(numbers or CRITERIA, key=lambda n: (n == 6, n))
    out = []
    for n in numbers:
        res = CRITERIA[n]()
        if echo:
            echo(res.line())
        out.append(res)
    return sorted(out, key=lambda r: r.number)
