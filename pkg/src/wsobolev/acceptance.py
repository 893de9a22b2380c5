"""The acceptance battery behind ``wsobolev selftest``.

Every criterion draws its inputs from its own stream ``make_rng(seed, name)``
and returns a :class:`CriterionResult`.  Reports contain no timings, so two
runs with the same seed produce identical bytes; runtimes are kept on the
result objects for the budget checks.
"""

import hashlib
import io
import time
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .cylinder import (
    CylinderFunction,
    directional_derivative,
    gaussian_bump,
    grad_norm,
    lip_lower_estimate,
    linear_functional,
    linear_outer,
    monomial,
    polynomial_outer,
    product_outer,
    segment_upper_bound,
    square_outer,
    tanh_outer,
)
from .distance_approx import (
    MollifierFamily,
    a_lower_bound_check,
    build_dictionary,
    g_eps_k,
    g_lipschitz_check,
    gradient_bound_check,
)
from .energy import parallelogram_check, pre_cheeger
from .examples import TranslationFamily, dirac_embedding_energy, gaussian_family_check, translation_family_report
from .geometry import EmpiricalMeasure, MetaMeasure, pushforward
from .hopflax import FiniteMetricSpace, check_slope_bound, verify_identity_25
from .transport import GaussianMeasure, duality_gap, gaussian_w2, kantorovich_potentials, w2_1d, w2_exact

__all__ = [
    "CriterionResult",
    "CRITERIA",
    "run_criterion",
    "run_battery",
    "format_report",
    "random_measure",
    "random_cylinder",
]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metric: float
    threshold: float
    detail: str
    runtime: float = 0.0
    budget: float = float("inf")

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} [{self.name}]: {status} metric={self.metric:.6e} threshold={self.threshold:.1e} {self.detail}"


# ---------------------------------------------------------------- random inputs


def random_measure(rng, dim, n_min=1, n_max=6, scale=1.0):
    n = int(rng.integers(n_min, n_max + 1))
    return EmpiricalMeasure(scale * rng.standard_normal((n, dim)), rng.uniform(0.1, 1.0, n))


def random_cylinder(rng, dim):
    n = int(rng.integers(1, 4))
    feats = [gaussian_bump(rng.standard_normal(dim), rng.uniform(0.8, 2.0)) for _ in range(n)]
    kind = int(rng.integers(0, 4))
    if kind == 0:
        outer = linear_outer(rng.standard_normal(n), rng.standard_normal())
    elif kind == 1:
        outer = square_outer(rng.uniform(0.5, 2.0, n), n)
    elif kind == 2:
        outer = tanh_outer(rng.standard_normal(n), rng.standard_normal())
    elif n >= 2:
        outer = product_outer(n)
    else:
        outer = polynomial_outer([(1.0, [3]), (-0.5, [1])], 1)
    return CylinderFunction(outer, feats)


# ---------------------------------------------------------------- criteria


def _c1(seed):
    g0, g2 = GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([2.0], [[1.0]])
    closed_err = abs(gaussian_w2(g0, g2) - 2.0)
    row = gaussian_family_check([(g0, g2)], n_samples=1000, seed=seed, rtol=np.inf)[0]
    passed = closed_err <= 1e-12 and row["rel_error"] <= 0.05
    detail = f"closed_form_error={closed_err:.3e} empirical={row['empirical']:.12f} rel_error={row['rel_error']:.6f}"
    return passed, row["rel_error"], 0.05, detail


def _c2(seed):
    rng = make_rng(seed, "ot-exactness")
    worst_diff = worst_gap = 0.0
    for _ in range(100):
        mu = random_measure(rng, 1, 1, 50, scale=2.0)
        nu = random_measure(rng, 1, 1, 50, scale=2.0)
        cost = w2_exact(mu, nu)[0]
        worst_diff = max(worst_diff, abs(cost - w2_1d(mu, nu)))
        pair = kantorovich_potentials(mu, nu)
        u, v = pair.dual_values()
        gap = abs(duality_gap(mu, nu, u, v))
        worst_gap = max(worst_gap, gap / (1.0 + cost**2))
    passed = worst_diff <= 1e-9 and worst_gap <= 1e-7
    return passed, worst_diff, 1e-9, f"max_scaled_duality_gap={worst_gap:.3e}"


def _c3(seed):
    rng = make_rng(seed, "hilbertianity")
    dim = 2
    m = MetaMeasure((rng.uniform(0.1, 1.0), random_measure(rng, dim)) for _ in range(10))
    worst = 0.0
    for _ in range(50):
        F, G = random_cylinder(rng, dim), random_cylinder(rng, dim)
        defect = parallelogram_check(F, G, m, rtol=np.inf)
        worst = max(worst, defect / (1.0 + pre_cheeger(F, m) + pre_cheeger(G, m)))
    return worst <= 1e-10, worst, 1e-10, "pairs=50 components=10"


def _c4(seed):
    rng = make_rng(seed, "differential")
    t = 1e-4
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 3))
        F = random_cylinder(rng, dim)
        mu = random_measure(rng, dim)
        u = rng.standard_normal(mu.atoms.shape)
        exact = directional_derivative(F, mu, u)
        plus = F(pushforward(mu, lambda x: x + t * u))
        minus = F(pushforward(mu, lambda x: x - t * u))
        fd = (plus - minus) / (2 * t)
        worst = max(worst, abs(fd - exact) / (1e-6 + 1e-4 * abs(exact)))
    return worst <= 1.0, worst, 1.0, "ratio of |fd - exact| to 1e-6 + 1e-4 |exact|, t=1e-4"


def _c5(seed):
    rng = make_rng(seed, "lip-equality")
    worst_rel = worst_seg = 0.0
    cases = tries = 0
    while cases < 50 and tries < 2000:
        tries += 1
        dim = int(rng.integers(1, 3))
        F = random_cylinder(rng, dim)
        mu = random_measure(rng, dim)
        g = grad_norm(F, mu)
        if g < 0.1:
            continue
        cases += 1
        est = lip_lower_estimate(F, mu, 1e-3)
        worst_rel = max(worst_rel, abs(est - g) / g)
        mu1 = random_measure(rng, dim)
        lhs, rhs = segment_upper_bound(F, mu, mu1)
        worst_seg = max(worst_seg, (lhs - rhs) / max(rhs, 1e-300))
    passed = cases == 50 and worst_rel <= 0.01 and worst_seg <= 1e-2
    return passed, worst_rel, 0.01, f"cases={cases} max_segment_violation={max(worst_seg, 0.0):.3e}"


def _c6(seed):
    rng = make_rng(seed, "hopf-lax")
    worst, worst_margin = 0.0, -np.inf
    for _ in range(20):
        space = FiniteMetricSpace.from_points(rng.uniform(0.0, 3.0, (20, 2)))
        f = rng.standard_normal(20)
        t = float(rng.uniform(0.1, 3.0))
        q = float(rng.choice([1.5, 2.0, 3.0]))
        worst = max(worst, verify_identity_25(space, f, t, 512, q))
        worst_margin = max(worst_margin, check_slope_bound(space, f, t, q, atol=np.inf))
    two = FiniteMetricSpace([[0.0, 1.0], [1.0, 0.0]])
    analytic = verify_identity_25(two, [0.0, 1.0], 1.0, 512, 2.0)
    worst_margin = max(worst_margin, check_slope_bound(two, [0.0, 1.0], 1.0, 2.0, atol=np.inf))
    passed = worst <= 1e-3 and analytic <= 1e-12 and worst_margin <= 0.0
    return passed, worst, 1e-3, f"two_point_residual={analytic:.3e} max_slope_margin={worst_margin:.6f}"


def _c7(seed):
    rng = make_rng(seed, "density")
    configs = [(1, 0.5), (1, 0.25), (2, 0.5), (2, 0.25)]
    worst = {"monotone": 0.0, "upper": -np.inf, "equality": 0.0, "lipschitz": -np.inf, "gradient": -np.inf}
    for b in range(10):
        dim, eps = configs[b % 4]
        fam = MollifierFamily(eps, dim)
        nu = random_measure(rng, dim, 1, 4)
        members = [random_measure(rng, dim, 1, 4) for _ in range(5)]
        dic = build_dictionary(nu, fam, members)
        for h in range(len(dic)):
            a_lower_bound_check(dic, h)
        dic.lipschitz_radius_check(4.0 * rng.standard_normal((32, dim)) / eps)
        probes = members[:3] + [random_measure(rng, dim, 1, 4) for _ in range(7)]
        K = len(dic)
        for p, mu in enumerate(probes):
            G = np.maximum.accumulate(dic.integrals(mu))
            G_direct = np.array([g_eps_k(dic, mu, k) for k in range(1, K + 1)])
            F = dic.f_nu_eps(mu)
            worst["monotone"] = max(worst["monotone"], float(np.max(np.abs(G - G_direct))), float(np.max(-np.diff(G_direct), initial=0.0)))
            worst["upper"] = max(worst["upper"], float((G_direct - F).max()))
            h = dic.index_of(mu)
            if h is not None:
                worst["equality"] = max(worst["equality"], abs(G_direct[h:] - F).max())
                worst["gradient"] = max(worst["gradient"], float(np.subtract(*gradient_bound_check(dic, mu, h, np.inf))))
            other = probes[(p + 1) % len(probes)]
            lhs, rhs = g_lipschitz_check(dic, mu, other, K, slack=np.inf)
            worst["lipschitz"] = max(worst["lipschitz"], lhs - rhs)
    passed = (
        worst["monotone"] <= 0.0
        and worst["upper"] <= 1e-6
        and worst["equality"] <= 1e-6
        and worst["lipschitz"] <= 1e-6
        and worst["gradient"] <= 1e-3
    )
    detail = " ".join(f"{k}={v:.3e}" for k, v in worst.items())
    return passed, worst["upper"], 1e-6, f"dictionaries=10 probes=10 {detail}"


def _c8(seed):
    omegas = np.linspace(-2.0, 2.0, 9)[:, None]
    tf = TranslationFamily(EmpiricalMeasure([[-1.0], [1.0]]), omegas, np.full(9, 1.0 / 9))
    rows = translation_family_report(tf, linear_functional(monomial([2])), tol=np.inf, orth_tol=np.inf, pyth_tol=np.inf)
    closed = max(abs(r["Dm_projection"][0] - 2.0 * r["omega"][0]) for r in rows)
    orth = max(r["orthogonality"] for r in rows)
    pyth = max(r["pythagoras_defect"] for r in rows)
    passed = closed <= 1e-10 and orth <= 1e-12 and pyth <= 1e-9
    return passed, closed, 1e-10, f"orthogonality={orth:.3e} pythagoras={pyth:.3e}"


def _c9(seed):
    rng = make_rng(seed, "dirac")
    worst = 0.0
    for dim in (1, 2):
        for _ in range(3):
            grid = rng.uniform(-2.0, 2.0, (100, dim))
            masses = rng.uniform(0.1, 1.0, 100)
            outer = tanh_outer([rng.standard_normal()], rng.standard_normal())
            feature = gaussian_bump(rng.standard_normal(dim), rng.uniform(0.8, 2.0))
            w, e = dirac_embedding_energy(outer, feature, grid, masses, tol=np.inf)
            worst = max(worst, abs(w - e) / (1.0 + abs(e)))
    return worst <= 1e-10, worst, 1e-10, "grids=6 points=100"


CRITERIA = [
    (1, "gaussian_closed_form", _c1, 5.0),
    (2, "ot_exactness", _c2, 30.0),
    (3, "hilbertianity", _c3, 10.0),
    (4, "differential", _c4, 10.0),
    (5, "lip_equals_grad_norm", _c5, float("inf")),
    (6, "hopf_lax_identity", _c6, float("inf")),
    (7, "density_inequalities", _c7, 300.0),
    (8, "projection_structure", _c8, float("inf")),
    (9, "dirac_isometry", _c9, float("inf")),
]


def run_criterion(number, seed=0):
    for num, name, fn, budget in CRITERIA:
        if num == number:
            start = time.perf_counter()
            passed, metric, threshold, detail = fn(seed)
            runtime = time.perf_counter() - start
            ok = bool(passed) and runtime <= budget
            if runtime > budget:
                detail += f" over_time_budget={budget:g}s"
            return CriterionResult(num, name, ok, float(metric), float(threshold), detail, runtime, budget)
    raise KeyError(f"no criterion {number}")


def format_report(results):
    buf = io.StringIO()
    for r in results:
        buf.write(r.line() + "\n")
    return buf.getvalue()


def run_battery(seed=0, determinism=True):
    """Criteria 1-9, then criterion 10: a second pass must reproduce the report byte for byte."""
    results = [run_criterion(num, seed) for num, *_ in CRITERIA]
    if determinism:
        start = time.perf_counter()
        first = format_report(results).encode()
        second = format_report([run_criterion(num, seed) for num, *_ in CRITERIA]).encode()
        same = first == second
        digest = hashlib.sha256(first).hexdigest()[:16]
        results.append(
            CriterionResult(10, "determinism", same, 0.0 if same else 1.0, 0.0, f"sha256={digest}",
                            time.perf_counter() - start)
        )
    return results
