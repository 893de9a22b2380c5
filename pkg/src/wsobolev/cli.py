"""Command line front end.

Exit codes: 0 on success, 1 when a numerical check fails (the failing check
is named on stderr), 2 on invalid input (missing files are reported with
their path).
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from ._validation import CheckFailedError, SolverError, ValidationError
from .cylinder import cylinder_from_config, feature_from_config, outer_from_config
from .distance_approx import (
    QUADRATURE_SLACK,
    SOLVER_SLACK,
    MollifierFamily,
    build_dictionary,
    g_lipschitz_check,
    gradient_bound_check,
)
from .energy import sobolev_fit
from .examples import TranslationFamily, dirac_embedding_energy, gaussian_family_check, translation_family_report
from .geometry import load_measure, load_meta_measure
from .hopflax import FiniteMetricSpace, hopf_lax
from .transport import GaussianMeasure, kantorovich_potentials, w2_exact

__all__ = ["main", "run", "build_parser"]


# ---------------------------------------------------------------- input helpers


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def _read_csv_matrix(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"no such file: {path}") from exc
    try:
        values = [[float(c) for c in r] for r in rows]
    except ValueError:
        # one header line is allowed
        values = [[float(c) for c in r] for r in rows[1:]]
    if not values:
        raise ValidationError(f"{path}: no numeric rows")
    if len({len(r) for r in values}) != 1:
        raise ValidationError(f"{path}: rows have different lengths")
    return np.array(values)


def _read_vector(path):
    m = _read_csv_matrix(path)
    if m.shape[1] != 1 and m.shape[0] != 1:
        raise ValidationError(f"{path}: expected a single column of values")
    return m.ravel()


def _check_keys(cfg, allowed, where):
    if not isinstance(cfg, dict):
        raise ValidationError(f"{where} must be a JSON object")
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _load_measure_list(path):
    """A directory of measure files (sorted by name) or a JSON list / ``{"measures": [...]}``."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
        if not names:
            raise ValidationError(f"{path}: directory holds no .json measures")
        return [load_measure(os.path.join(path, n)) for n in names]
    data = _read_json(path)
    if isinstance(data, dict) and "components" in data:
        return list(load_meta_measure(path).measures)
    if isinstance(data, dict):
        _check_keys(data, {"measures"}, path)
        data = data["measures"]
    if not isinstance(data, list) or not data:
        raise ValidationError(f"{path}: expected a nonempty list of measures")
    base = os.path.dirname(path)
    out = []
    for i, item in enumerate(data):
        if isinstance(item, str) and not os.path.isabs(item):
            item = os.path.join(base, item)
        try:
            out.append(load_measure(item))
        except ValidationError as exc:
            raise ValidationError(f"{path}: measures[{i}]: {exc}") from exc
    return out


# ---------------------------------------------------------------- output helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in np.ravel(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _emit(args, columns, rows, extra=None):
    """Write ``rows`` (dicts) as CSV or JSON to ``--out`` or stdout."""
    if args.format == "json":
        payload = {"rows": [{c: _jsonable(r[c]) for c in columns} for r in rows]}
        if extra:
            payload.update({k: _jsonable(v) for k, v in extra.items()})
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])
        text = buf.getvalue()
    _write(args.out, text)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------- subcommands


def cmd_w2(args):
    mu, nu = load_measure(args.mu), load_measure(args.nu)
    cost, plan = w2_exact(mu, nu)
    if args.plan:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "mass", "cost_ij"])
        for i, j, mass, c in plan.entries():
            writer.writerow([i, j, repr(mass), repr(c)])
        _write(args.plan, buf.getvalue())
    if args.out is None and args.format == "csv":
        print(repr(cost))
    else:
        _emit(args, ["w2", "w2_squared", "marginal_error"], [{"w2": cost, "w2_squared": cost**2, "marginal_error": plan.marginal_error()}])
    return 0


def cmd_potentials(args):
    nu, mu = load_measure(args.nu), load_measure(args.mu)
    pair = kantorovich_potentials(nu, mu, R=args.radius)
    rows = [{"atom": i, "x": x, "phi": p} for i, (x, p) in enumerate(zip(pair.grid, pair.phi_values))]
    extra = {
        "cost": pair.cost,
        "radius": pair.radius,
        "anchor_constant": pair.anchor_constant,
        "phi_star_target": pair.phi_star(mu.atoms),
        "conjugacy_residual": pair.conjugacy_residual(),
        "identity_residual": pair.potential_identity_residual(),
    }
    _emit(args, ["atom", "x", "phi"], rows, extra)
    return 0


def cmd_hopflax(args):
    if args.space.endswith(".json"):
        space = FiniteMetricSpace.from_measures(_load_measure_list(args.space))
    else:
        space = FiniteMetricSpace(_read_csv_matrix(args.space))
    f = _read_vector(args.f)
    res = hopf_lax(space, f, args.t, args.q)
    rows = [{"point": i, "f": f[i], "Qf": res.q_values[i], "d_plus": res.d_plus[i]} for i in range(len(space))]
    _emit(args, ["point", "f", "Qf", "d_plus"], rows)
    return 0


def cmd_fit(args):
    m = load_meta_measure(args.m)
    y = _read_vector(args.targets)
    cfg = _read_json(args.dict)
    _check_keys(cfg, {"features"}, args.dict)
    dictionary = [feature_from_config(c, m.dim) for c in cfg["features"]]
    if y.size != len(m):
        raise ValidationError(f"{args.targets}: {y.size} targets for {len(m)} measures")
    fit = sobolev_fit(list(zip(m.measures, y)), m, dictionary, args.lam)
    text = json.dumps(fit.to_dict(), indent=2, sort_keys=True) + "\n"
    _write(args.out, text)
    return 0


def cmd_approx_distance(args):
    nu = load_measure(args.nu)
    members = _load_measure_list(args.dict)
    probes = _load_measure_list(args.probes)
    fam = MollifierFamily(args.eps, nu.dim, args.order)
    k_max = len(members) if args.k_max is None else args.k_max
    if not 1 <= k_max <= len(members):
        raise ValidationError(f"--k-max must lie in [1, {len(members)}], got {k_max}")
    dic = build_dictionary(nu, fam, members[:k_max], n_uniform=args.n_uniform)
    rows = []
    failure = None
    for p, mu in enumerate(probes):
        vals = dic.integrals(mu)
        F = dic.f_nu_eps(mu)
        G = np.maximum.accumulate(vals)
        h = dic.index_of(mu)
        if h is not None and failure is None:
            try:
                gradient_bound_check(dic, mu, h, slack=args.slack_quadrature)
            except CheckFailedError as exc:
                failure = exc
        for k in range(1, k_max + 1):
            lhs, rhs = g_lipschitz_check(dic, mu, members[0], k, slack=math.inf)
            margin = rhs - lhs
            gap = F - G[k - 1]
            rows.append({"probe": p, "k": k, "G_eps_k": G[k - 1], "F_nu_eps": F, "gap": gap, "lipschitz_margin": margin})
            if failure is None and gap < -args.slack_solver:
                failure = CheckFailedError("g_upper_bound", f"probe {p}, k {k}: G exceeds F by {-gap:.3e}")
            if failure is None and margin < -args.slack_solver:
                failure = CheckFailedError("g_lipschitz", f"probe {p}, k {k}: margin {margin:.3e}")
    _emit(args, ["probe", "k", "G_eps_k", "F_nu_eps", "gap", "lipschitz_margin"], rows)
    if failure is not None:
        raise failure
    return 0


def _example_dirac(cfg, args):
    _check_keys(cfg, {"outer", "feature", "grid", "masses"}, "dirac config")
    feature = feature_from_config(cfg["feature"])
    outer = outer_from_config(cfg.get("outer", {"type": "linear"}), 1)
    w, e = dirac_embedding_energy(outer, feature, cfg["grid"], cfg.get("masses"))
    _emit(args, ["wasserstein_energy", "euclidean_energy", "difference"],
          [{"wasserstein_energy": w, "euclidean_energy": e, "difference": w - e}])


def _example_translation(cfg, args):
    _check_keys(cfg, {"lambda", "omegas", "masses", "function"}, "translation config")
    lam = load_measure(cfg["lambda"])
    omegas = np.asarray(cfg["omegas"], dtype=float)
    if omegas.ndim == 1:
        omegas = omegas[:, None]
    masses = cfg.get("masses", np.full(omegas.shape[0], 1.0 / omegas.shape[0]))
    tf = TranslationFamily(lam, omegas, masses)
    F = cylinder_from_config(cfg["function"], lam.dim)
    rows = translation_family_report(tf, F)
    _emit(args, list(rows[0]), rows)


def _example_gaussian(cfg, args):
    _check_keys(cfg, {"pairs", "n_samples"}, "gaussian config")
    pairs = []
    for i, pair in enumerate(cfg["pairs"]):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValidationError(f"pairs[{i}] must hold two Gaussians")
        pairs.append((GaussianMeasure.from_dict(pair[0]), GaussianMeasure.from_dict(pair[1])))
    rows = gaussian_family_check(pairs, int(cfg.get("n_samples", 1000)), args.seed)
    _emit(args, ["pair", "closed_form", "empirical", "rel_error"], rows)


def cmd_examples(args):
    cfg = _read_json(args.config)
    {"dirac": _example_dirac, "translation": _example_translation, "gaussian": _example_gaussian}[args.family](cfg, args)
    return 0


def cmd_selftest(args):
    from .acceptance import format_report, run_battery

    results = run_battery(seed=args.seed, determinism=not args.skip_determinism)
    for r in results:
        print(f"criterion {r.number}: {r.runtime:.2f}s", file=sys.stderr)
    if args.format == "json":
        rows = [{"number": r.number, "name": r.name, "passed": r.passed, "metric": r.metric,
                 "threshold": r.threshold, "detail": r.detail} for r in results]
        text = json.dumps({"criteria": rows}, indent=2, sort_keys=True) + "\n"
    else:
        text = format_report(results)
    _write(args.out, text)
    failed = [r for r in results if not r.passed]
    if failed:
        raise CheckFailedError(failed[0].name, f"criterion {failed[0].number} failed: {failed[0].detail}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None)
    common.add_argument("--format", choices=["csv", "json"], default="csv")

    parser = argparse.ArgumentParser(prog="wsobolev", description="Numerical calculus on the Wasserstein space.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("w2", parents=[common], help="exact W2 between two measures")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--plan", default=None, help="write the optimal plan as CSV")
    p.set_defaults(func=cmd_w2)

    p = sub.add_parser("potentials", parents=[common], help="normalized Kantorovich potentials")
    p.add_argument("--nu", required=True, help="source measure (carries phi)")
    p.add_argument("--mu", required=True, help="target measure (carries phi*)")
    p.add_argument("--radius", type=float, default=None)
    p.set_defaults(func=cmd_potentials)

    p = sub.add_parser("hopflax", parents=[common], help="Hopf-Lax regularization on a finite metric space")
    p.add_argument("--space", required=True, help="distance matrix CSV or JSON list of measures")
    p.add_argument("--f", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--q", type=float, default=2.0)
    p.set_defaults(func=cmd_hopflax)

    p = sub.add_parser("fit", parents=[common], help="Sobolev-penalized regression on measures")
    p.add_argument("--m", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("approx-distance", parents=[common], help="G_{eps,k} against F^eps_nu")
    p.add_argument("--nu", required=True)
    p.add_argument("--dict", required=True, help="directory of measures or JSON list")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--probes", required=True)
    p.add_argument("--order", type=int, default=None, help="kernel quadrature order")
    p.add_argument("--n-uniform", type=int, default=None)
    p.add_argument("--slack-solver", type=float, default=SOLVER_SLACK)
    p.add_argument("--slack-quadrature", type=float, default=QUADRATURE_SLACK)
    p.set_defaults(func=cmd_approx_distance)

    p = sub.add_parser("examples", parents=[common], help="closed-form example families")
    p.add_argument("family", choices=["dirac", "translation", "gaussian"])
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_examples)

    p = sub.add_parser("selftest", parents=[common], help="run the acceptance battery")
    p.add_argument("--skip-determinism", action="store_true", help="skip the second pass")
    p.set_defaults(func=cmd_selftest)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except CheckFailedError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return code


def main(argv=None):
    sys.exit(run(argv))
