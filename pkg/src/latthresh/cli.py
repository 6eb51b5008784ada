"""Command-line interface: ``lattice-threshold <command> --config run.json``.

Exit status: 0 ok, 1 falsified invariant, 2 usage or configuration error.
"""

import argparse
import itertools
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import __version__
from .bs import TAU_Z, build_bs_matrix, count_above_one, critical_coupling, \
    dispersion_sweep, solve_bound_states
from .config import ConfigError, load_config, parse_config
from .green import GreenError, green_kernel
from .io import write_csv, write_json
from .model import HypothesisViolation, canonical, check_cnd, pair_dispersion
from .oracle import OracleError, box_spectrum, convergence_rule, periodic_fiber_check
from .threshold import SET_NAMES, classify_threshold, phase_map
from .validate import run_all, z_ladder

THREADS_ENV = "LATTICE_THRESHOLD_THREADS"
EXIT_OK, EXIT_FALSIFIED, EXIT_USAGE = 0, 1, 2


class Falsified(RuntimeError):
    """An invariant failed; the run aborts with exit status 1."""


def _kcols(d, name="k"):
    return [f"{name}{j + 1}" for j in range(d)]


def _meta(cfg, **extra):
    meta = {"config_hash": cfg.digest, "version": __version__}
    meta.update({k: v for k, v in extra.items() if v is not None})
    return meta


def _mus(cfg, what):
    if cfg.mus is None:
        raise ConfigError(f"mu = 'critical' is not supported by '{what}'")
    return cfg.mus


def _critical_mu(cfg):
    pair0 = pair_dispersion(cfg.eps, cfg.k0)
    return [float(critical_coupling(pair0, cfg.potential).mu_star[0])]


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------

def cmd_green(cfg, out, threads):
    d = cfg.dim
    z = cfg.get("green", "z", "threshold")
    binding = cfg.get("green", "binding")
    window = cfg.get("green", "window", 2)
    method = cfg.get("green", "method", "auto")
    quad = {k: v for k, v in cfg.raw.get("quadrature", {}).items()}
    points = sorted({canonical(x) for x in itertools.product(range(-window, window + 1), repeat=d)})
    files = []
    for i, k in enumerate(cfg.ks):
        pair = pair_dispersion(cfg.eps, k)
        if binding is not None:
            b = float(binding)
        elif z == "threshold":
            b = 0.0
        else:
            b = pair.emin - float(z)
            if b < 0:
                raise GreenError(f"z = {z} lies above the threshold emin(k) = {pair.emin:.12g}")
        opts = {}
        if method == "quadrature":
            opts = {k_: quad[k_] for k_ in ("n_axis", "n_max", "tol") if k_ in quad}
        elif method == "subtraction":
            opts = {k_: quad[k_] for k_ in ("n_axis", "n_max") if k_ in quad}
        table = green_kernel(pair, points, b=b, method=method, **opts)
        files.append(write_csv(os.path.join(out, f"green_{i:03d}.csv"),
                               _kcols(d, "x") + ["value", "abs_error", "method"], table.rows(),
                               _meta(cfg, k=list(map(float, pair.k)), emin=repr(pair.emin),
                                     z=repr(pair.emin - b), flags=";".join(table.flags) or None)))
    return {"files": files}, EXIT_OK


_STATE_COLS = ["mu", "emin", "state", "z", "z_tol", "binding", "log_binding", "multiplicity",
               "residual"]


def _state_rows(k, mu, emin, states):
    rows = []
    for j in range(len(states.energies)):
        rows.append(list(map(float, k)) + [float(mu), emin, j, float(states.energies[j]), TAU_Z,
                                           float(states.bindings[j]), float(states.log_bindings[j]),
                                           int(states.multiplicities[j]), float(states.residuals[j])])
    return rows


def _rank_guard(states):
    if states.count > states.basis_size:
        raise Falsified(f"bound-state count {states.count} exceeds the even-basis size "
                        f"{states.basis_size} at k={states.k}")


def cmd_spectrum(cfg, out, threads):
    d, rows, errors = cfg.dim, [], []
    jobs = [(mu, k) for mu in _mus(cfg, "spectrum") for k in cfg.ks]

    def one(job):
        mu, k = job
        pair = pair_dispersion(cfg.eps, k)
        try:
            return pair, solve_bound_states(mu, pair, cfg.potential), None
        except (GreenError, ValueError) as exc:
            return pair, None, str(exc)

    for (mu, _), (pair, states, err) in zip(jobs, _map(one, jobs, threads)):
        if err:
            errors.append({"mu": mu, "k": list(map(float, pair.k)), "error": err})
            continue
        _rank_guard(states)
        rows += _state_rows(pair.k, mu, pair.emin, states)
    f = write_csv(os.path.join(out, "spectrum.csv"), _kcols(d) + _STATE_COLS, rows, _meta(cfg))
    write_json(os.path.join(out, "spectrum.json"), {"config_hash": cfg.digest, "rows": len(rows),
                                                    "errors": errors})
    return {"files": [f], "errors": errors}, EXIT_OK


def cmd_sweep(cfg, out, threads):
    d, rows, errors = cfg.dim, [], []
    cnd = check_cnd(cfg.eps, n_samples=2000, rng_seed=cfg.seed)
    zero = pair_dispersion(cfg.eps, np.zeros(d))
    for mu in _mus(cfg, "sweep"):
        ref = solve_bound_states(mu, zero, cfg.potential)
        for r in dispersion_sweep(mu, cfg.eps, cfg.potential, cfg.ks, threads=threads):
            if r.states is None:
                errors.append({"mu": mu, "k": list(map(float, r.k)), "error": r.error})
                continue
            _rank_guard(r.states)
            for j, row in enumerate(_state_rows(r.k, mu, r.emin, r.states)):
                z = row[d + 3]
                if j < ref.count and cnd.consistent:
                    z0 = float(ref.energies[j])
                    lower = bool(z0 < z) if np.any(r.k != 0) else True
                    upper = bool(z < z0 + (r.emin - zero.emin)) if np.any(r.k != 0) else True
                    audit = [z0, lower, upper]
                else:
                    audit = ["", "", ""]
                rows.append(row + audit)
    header = _kcols(d) + _STATE_COLS + ["z_at_k0", "lower_bound_ok", "upper_bound_ok"]
    f = write_csv(os.path.join(out, "sweep.csv"), header, rows,
                  _meta(cfg, cnd=cnd.consistent, cnd_max_violation=repr(cnd.max_violation)))
    bad = [r for r in rows if r[-2] is False or r[-1] is False]
    write_json(os.path.join(out, "sweep.json"), {"config_hash": cfg.digest, "rows": len(rows),
                                                 "cnd": bool(cnd.consistent),
                                                 "bound_violations": len(bad), "errors": errors})
    return {"files": [f], "errors": errors}, EXIT_FALSIFIED if bad else EXIT_OK


def cmd_classify(cfg, out, threads):
    mus = cfg.mus if cfg.mus is not None else _critical_mu(cfg)
    reports, errors = [], []
    for mu in mus:
        for k in cfg.ks:
            pair = pair_dispersion(cfg.eps, k)
            try:
                rep = classify_threshold(mu, pair, cfg.potential)
                cc = critical_coupling(pair, cfg.potential)
            except GreenError as exc:
                errors.append({"mu": mu, "k": list(map(float, pair.k)), "error": str(exc)})
                continue
            item = rep.as_dict()
            item["critical_couplings"] = [float(x) for x in cc.mu_star]
            item["critical_coupling_errors"] = [float(x) for x in cc.errors]
            reports.append(item)
    if errors and not reports:
        raise GreenError(errors[0]["error"])
    f = write_json(os.path.join(out, "classify.json"),
                   {"config_hash": cfg.digest, "version": __version__, "reports": reports,
                    "errors": errors})
    return {"files": [f], "errors": errors}, EXIT_OK


def cmd_phase_map(cfg, out, threads):
    d = cfg.dim
    mu = (cfg.mus if cfg.mus is not None else _critical_mu(cfg))[0]
    pm = phase_map(mu, cfg.k0, cfg.potential, cfg.ks, cfg.eps)
    header = _kcols(d) + ["lambda_min_proj", "lambda_max_proj", "lambda_min_full",
                          "lambda_max_full", "tau_L"] + list(SET_NAMES) + ["label"]
    rows = [list(map(float, r.k)) + [r.proj_min, r.proj_max, r.full_min, r.full_max, r.tau]
            + [r.sets[n] for n in SET_NAMES] + [r.label] for r in pm.records]
    f = write_csv(os.path.join(out, "phase_map.csv"), header, rows,
                  _meta(cfg, mu=repr(float(mu)), k0=list(map(float, cfg.k0))))
    counts = {}
    for r in pm.records:
        counts[r.label] = counts.get(r.label, 0) + 1
    near = None
    if any(r.sets["Mcal_eq"] for r in pm.records):
        near = {name: ("found" if any(r.sets[name] for r in pm.records)
                       else "not found at this resolution") for name in ("Mcal_gt", "Mcal_lt")}
    write_json(os.path.join(out, "phase_map.json"),
               {"config_hash": cfg.digest, "mu": float(mu), "k0": cfg.k0, "multiplicity": pm.multiplicity,
                "labels": counts, "near_k_eq": near,
                "operator_hypothesis": _operator_hypothesis(cfg, mu), "errors": []})
    return {"files": [f]}, EXIT_OK


def _operator_hypothesis(cfg, mu):
    """Record whether the fiber operator at ``k0`` stays above its threshold.

    A Dirichlet box compression has its lowest eigenvalue above that of the full
    operator, so a box eigenvalue below ``emin`` certifies a violation; the
    converse is only consistency at the tested radius.
    """
    L = cfg.get("oracle", "L", 8)
    try:
        spec = box_spectrum(cfg.eps, np.asarray(cfg.k0, float), mu, cfg.potential, L,
                            max_basis=cfg.get("oracle", "cap", 100000))
    except OracleError as exc:
        return {"status": "unchecked", "reason": str(exc)}
    lowest = float(spec.eigenvalues[0]) if spec.eigenvalues.size else None
    violated = spec.bound.size > 0
    return {"status": "violated" if violated else "consistent", "L": L,
            "lowest": lowest, "emin": float(spec.emin)}


def cmd_oracle(cfg, out, threads):
    d = cfg.dim
    o = cfg.raw.get("oracle", {})
    eig_rows, diff_rows, count_rows, errors, bad = [], [], [], [], []
    for mu in _mus(cfg, "oracle"):
        for k in cfg.ks:
            pair = pair_dispersion(cfg.eps, k)
            kk = list(map(float, pair.k))
            try:
                conv = convergence_rule(cfg.eps, pair.k, mu, cfg.potential, tol=o.get("tol", 1e-9),
                                        L_max=o.get("L_max"), max_basis=o.get("cap", 100000),
                                        require_bound=False)
            except OracleError as exc:
                errors.append({"mu": mu, "k": kk, "error": str(exc)})
                continue
            spec = conv.spectrum
            for j, w in enumerate(spec.eigenvalues):
                eig_rows.append(kk + [mu, conv.L, j, float(w), conv.error, bool(w < spec.emin)])
            states = solve_bound_states(mu, pair, cfg.potential)
            levels = np.repeat(states.energies, states.multiplicities)
            for j in range(max(levels.size, spec.bound.size)):
                zb = float(levels[j]) if j < levels.size else ""
                zo = float(spec.bound[j]) if j < spec.bound.size else ""
                diff = abs(zb - zo) if zb != "" and zo != "" else ""
                ok = diff != "" and diff <= max(1e-7, conv.error)
                diff_rows.append(kk + [mu, j, zb, zo, diff, conv.error, ok])
                if conv.converged and not ok:
                    bad.append({"mu": mu, "k": kk, "state": j, "bs": zb, "box": zo})
            for z in z_ladder(pair, mu, cfg.potential, o.get("z_ladder", 20)):
                n_bs = count_above_one(build_bs_matrix(mu, pair, z=z, potential=cfg.potential))
                n_box = spec.count_below(z)
                count_rows.append(kk + [mu, float(z), n_bs, n_box, n_bs == n_box])
                if n_bs != n_box:
                    bad.append({"mu": mu, "k": kk, "z": float(z), "bs": n_bs, "box": n_box})
    files = [
        write_csv(os.path.join(out, "box_eigenvalues.csv"),
                  _kcols(d) + ["mu", "L", "index", "eigenvalue", "abs_error", "below_emin"],
                  eig_rows, _meta(cfg)),
        write_csv(os.path.join(out, "bs_vs_box.csv"),
                  _kcols(d) + ["mu", "state", "z_bs", "z_box", "abs_diff", "box_error", "agree"],
                  diff_rows, _meta(cfg)),
        write_csv(os.path.join(out, "counts.csv"),
                  _kcols(d) + ["mu", "z", "count_bs", "count_box", "agree"], count_rows, _meta(cfg)),
    ]
    report = {"config_hash": cfg.digest, "version": __version__, "errors": errors,
              "falsifications": bad}
    if d == 1:
        n = o.get("N", 8)
        try:
            fc = periodic_fiber_check(cfg.eps, n, _mus(cfg, "oracle")[0], cfg.potential)
            report["fiber_check"] = {"N": n, "max_deviation": fc.max_deviation, "ok": fc.ok,
                                     "fiber_dims": list(fc.dims.values())}
        except OracleError as exc:
            report["fiber_check"] = {"N": n, "ok": False, "error": str(exc)}
            bad.append({"fiber_check": str(exc)})
    files.append(write_json(os.path.join(out, "oracle.json"), report))
    return {"files": files, "errors": errors}, EXIT_FALSIFIED if bad else EXIT_OK


def cmd_validate(cfg, out, threads):
    numbers = cfg.get("validate", "criteria")
    results = run_all(numbers, echo=print)
    f = write_json(os.path.join(out, "validate.json"),
                   {"config_hash": cfg.digest, "version": __version__,
                    "criteria": [dict(r.as_dict(), runtime=None) for r in results]})
    ok = all(r.passed for r in results)
    return {"files": [f]}, EXIT_OK if ok else EXIT_FALSIFIED


COMMANDS = {
    "green": cmd_green,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "classify": cmd_classify,
    "phase-map": cmd_phase_map,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
}


def default_config_path():
    return str(resources.files("latthresh").joinpath("data/default.json"))


def build_parser():
    p = argparse.ArgumentParser(prog="lattice-threshold",
                                description="Bound states and thresholds of lattice pair operators.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        s = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", "").replace("_", "-"))
        s.add_argument("--config", default=None,
                       help="JSON run configuration (default: the shipped default config)")
        s.add_argument("--out", default=None, help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (overrides ${THREADS_ENV} and the config)")
    return p


def _threads(args, cfg):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return cfg.threads


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config or default_config_path())
        threads = _threads(args, cfg)
        out = args.out or cfg.output
        summary, code = COMMANDS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GreenError, HypothesisViolation) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OracleError, ValueError) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Falsified as exc:
        print(f"falsified: {exc}", file=sys.stderr)
        return EXIT_FALSIFIED
    for f in summary.get("files", []):
        print(f)
    if summary.get("errors"):
        print(f"{len(summary['errors'])} per-point errors recorded in the summary JSON",
              file=sys.stderr)
    return code


__all__ = ["main", "build_parser", "parse_config", "COMMANDS"]

if __name__ == "__main__":
    sys.exit(main())
