import logging
import math

import numpy as np
import pytest

from wsobolev import CheckFailedError, ValidationError
from wsobolev.cylinder import (
    CylinderFunction,
    constant_function,
    coord_bump,
    coordinate,
    gaussian_bump,
    grad_norm,
    linear_functional,
    linear_outer,
    monomial,
    square_outer,
    tanh_outer,
)
from wsobolev.energy import (
    SobolevRegressor,
    carre_du_champ,
    m_differential_linear,
    parallelogram_check,
    pre_cheeger,
    pre_cheeger_bilinear,
    residual_orthogonality_report,
    sobolev_fit,
)
from wsobolev.geometry import EmpiricalMeasure, MetaMeasure, lift_integral, make_measure

phi = gaussian_bump([0.0])
sym = make_measure([[-1.0], [1.0]], [1, 1])


def random_meta(rng, dim=2, k=4):
    return MetaMeasure(
        (0.2 + rng.random(), EmpiricalMeasure(rng.normal(size=(n, dim)), rng.random(n) + 0.1))
        for n in rng.integers(1, 6, size=k)
    )


def random_F(rng, dim=2):
    feats = [gaussian_bump(rng.normal(size=dim), 0.8 + rng.random()) for _ in range(2)]
    return CylinderFunction([linear_outer, tanh_outer][rng.integers(2)](rng.normal(size=2)), feats)


# ---------------------------------------------------------------- pre-Cheeger energy


def test_pre_cheeger_examples():
    m = MetaMeasure([(1.0, sym)])
    assert pre_cheeger(constant_function(1.0), m) == 0.0
    assert pre_cheeger(linear_functional(phi), m) == pytest.approx(4 * math.exp(-2), rel=1e-14)
    assert pre_cheeger(linear_functional(phi), m.scaled(2.0)) == pytest.approx(8 * math.exp(-2), rel=1e-14)


def test_pre_cheeger_exponent():
    m = MetaMeasure([(1.0, sym)])
    F = linear_functional(phi)
    assert pre_cheeger(F, m, 3.0) == pytest.approx(grad_norm(F, sym) ** 3)
    for p in (1.0, math.inf, 0.5):
        with pytest.raises(ValidationError):
            pre_cheeger(F, m, p)


def test_quadratic_form(rng):
    for _ in range(10):
        F, m = random_F(rng), random_meta(rng)
        a = rng.normal()
        assert pre_cheeger(a * F, m) == pytest.approx(a * a * pre_cheeger(F, m), rel=1e-12)


def test_bilinear_examples(rng):
    m = random_meta(rng)
    F = random_F(rng)
    assert pre_cheeger_bilinear(F, constant_function(1.0, 2), m) == 0.0
    assert pre_cheeger_bilinear(F, F, m) == pytest.approx(pre_cheeger(F, m), rel=1e-12)
    G = random_F(rng)
    assert pre_cheeger_bilinear(F, G, m) == pytest.approx(pre_cheeger_bilinear(G, F, m), rel=1e-12)


def test_bilinear_orthogonal_bumps():
    # grad of x_1 is e_1, grad of x_2 is e_2: orthogonal at every atom
    m = MetaMeasure([(1.0, make_measure([[0.1, 0.2], [-0.3, 0.5]], [1, 2])), (0.5, EmpiricalMeasure.dirac([1.0, 1.0]))])
    assert pre_cheeger_bilinear(linear_functional(coordinate(0, 2)), linear_functional(coordinate(1, 2)), m) == 0.0


def test_carre_du_champ(rng):
    m = random_meta(rng)
    F, G = random_F(rng), random_F(rng)
    mu = m.measures[0]
    assert carre_du_champ(F, F, mu) == pytest.approx(grad_norm(F, mu) ** 2, rel=1e-12)
    assert carre_du_champ(F, constant_function(0.0, 2), mu) == 0.0
    lifted = sum(mass * carre_du_champ(F, G, mu) for mass, mu in m.components)
    assert abs(lifted - pre_cheeger_bilinear(F, G, m)) <= 1e-12


def test_parallelogram(rng):
    m = random_meta(rng)
    F = random_F(rng)
    zero = CylinderFunction(linear_outer([0.0]), [gaussian_bump([0.0, 0.0])])
    assert parallelogram_check(F, zero, m) <= 1e-12
    assert parallelogram_check(F, F, m) <= 1e-12
    for _ in range(50):
        parallelogram_check(random_F(rng), random_F(rng), random_meta(rng))


def test_parallelogram_failure_reported():
    m = MetaMeasure([(1.0, sym)])
    with pytest.raises(CheckFailedError, match="parallelogram"):
        parallelogram_check(linear_functional(phi), linear_functional(phi), m, rtol=-1.0)


def test_lift_integral_order():
    m = MetaMeasure([(2.0, sym), (1.0, EmpiricalMeasure.dirac([3.0]))])
    assert lift_integral(m, lambda mu, x: x[:, 0] ** 2) == 2.0 * 1.0 + 9.0


# ---------------------------------------------------------------- Sobolev regression


def objective_oracle(features, measures, y, w, lam):
    """Quadratic objective built from cylinder evaluations; Hessian and linear term by polarization."""
    J = len(features) + 1

    def value(c):
        F = CylinderFunction(linear_outer(c[1:], c[0]), features)
        m = MetaMeasure(zip(w, measures))
        return sum(wi * (F(mu) - yi) ** 2 for wi, mu, yi in zip(w, measures, y)) + lam * pre_cheeger(F, m)

    e = np.eye(J)
    f0 = value(np.zeros(J))
    H = np.empty((J, J))
    for i in range(J):
        for j in range(J):
            H[i, j] = value(e[i] + e[j]) - value(e[i]) - value(e[j]) + f0
    b = np.array([value(e[i]) - f0 - 0.5 * H[i, i] for i in range(J)])
    return np.linalg.solve(H, -b)


def test_fit_matches_hand_normal_equations(rng):
    features = [gaussian_bump([0.0]), gaussian_bump([1.0], 0.7)]
    measures = [make_measure([[0.2], [-0.4]], [1, 3]), make_measure([[0.9], [1.5]], [2, 1])]
    y, w = [0.3, -1.1], [1.0, 2.0]
    m = MetaMeasure(zip(w, measures))
    fit = sobolev_fit(zip(measures, y), m, features, 0.25)
    expected = objective_oracle(features, measures, y, w, 0.25)
    np.testing.assert_allclose(fit.coefficients, expected, atol=1e-9)
    assert fit.normal_residual <= 1e-8


def test_fit_interpolates(rng):
    features = [gaussian_bump([0.0]), gaussian_bump([1.0])]
    measures = [EmpiricalMeasure(rng.normal(size=(3, 1))) for _ in range(5)]
    truth = CylinderFunction(linear_outer([2.0, -1.0], 0.5), features)
    y = [truth(mu) for mu in measures]
    fit = sobolev_fit(zip(measures, y), MetaMeasure.uniform(measures), features, 0.0)
    assert fit.misfit <= 1e-10
    np.testing.assert_allclose(fit.coefficients, [0.5, 2.0, -1.0], atol=1e-6)


def test_fit_energy_matches_pre_cheeger(rng):
    features = [gaussian_bump([0.0]), coord_bump([0.5], 1.0)]
    measures = [EmpiricalMeasure(rng.normal(size=(4, 1))) for _ in range(6)]
    m = MetaMeasure.uniform(measures, 3.0)
    y = rng.normal(size=6)
    est = SobolevRegressor(features, lam=0.1).fit(measures, y, sample_weight=m.masses)
    assert est.energy_ == pytest.approx(pre_cheeger(est.to_cylinder(), m), abs=1e-10)
    np.testing.assert_allclose(est.predict(measures), [est.to_cylinder()(mu) for mu in measures], atol=1e-12)


def test_large_penalty_limit(rng):
    features = [gaussian_bump([0.0]), gaussian_bump([1.0])]
    measures = [EmpiricalMeasure(rng.normal(size=(3, 1))) for _ in range(5)]
    w = rng.random(5) + 0.5
    y = rng.normal(size=5)
    fit = sobolev_fit(zip(measures, y), MetaMeasure(zip(w, measures)), features, 1e9)
    assert np.abs(fit.coefficients[1:]).max() <= 1e-6
    assert fit.coefficients[0] == pytest.approx(w @ y / w.sum(), abs=1e-6)


def test_objective_and_misfit_monotone_in_lambda(rng):
    features = [gaussian_bump([0.0]), gaussian_bump([1.0]), coord_bump([0.0])]
    measures = [EmpiricalMeasure(rng.normal(size=(3, 1))) for _ in range(8)]
    y = rng.normal(size=8)
    objectives, misfits = [], []
    for lam in [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0]:
        est = SobolevRegressor(features, lam=lam).fit(measures, y)
        objectives.append(est.objective_)
        misfits.append(est.misfit_)
    assert all(b >= a - 1e-10 for a, b in zip(objectives, objectives[1:]))
    assert all(b >= a - 1e-10 for a, b in zip(misfits, misfits[1:]))


def test_fit_errors(rng):
    features = [gaussian_bump([0.0]), gaussian_bump([1.0])]
    measures = [EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0])]
    m = MetaMeasure.uniform(measures)
    with pytest.raises(ValidationError, match="rank"):
        sobolev_fit(zip(measures, [0.0, 1.0]), m, features, 0.0)
    with pytest.raises(ValidationError):
        sobolev_fit([(measures[0], 0.0)], m, features, 1.0)
    with pytest.raises(ValidationError, match="match"):
        sobolev_fit(zip(measures[::-1], [0.0, 1.0]), m, features, 1.0)
    with pytest.raises(ValidationError):
        SobolevRegressor(features, lam=-1.0).fit(measures, [0.0, 1.0])
    with pytest.raises(ValidationError):
        SobolevRegressor([], lam=1.0).fit(measures, [0.0, 1.0])


def test_regressor_is_sklearn_estimator():
    from sklearn.base import clone

    est = SobolevRegressor([phi], lam=0.5)
    assert clone(est).get_params()["lam"] == 0.5
    measures = [EmpiricalMeasure.dirac([x]) for x in (0.0, 0.5, 1.0)]
    est.fit(measures, [1.0, 0.5, 0.0])
    assert -np.inf < est.score(measures, [1.0, 0.5, 0.0]) <= 1.0


def test_fit_to_dict():
    measures = [EmpiricalMeasure.dirac([x]) for x in (0.0, 0.5, 1.0)]
    fit = sobolev_fit(zip(measures, [1.0, 0.5, 0.0]), MetaMeasure.uniform(measures), [phi], 0.1)
    record = fit.to_dict()
    assert set(record) == {"coefficients", "lambda", "misfit", "energy", "normal_residual", "dictionary"}
    assert len(record["coefficients"]) == 2


# ---------------------------------------------------------------- m-differential


def translation_meta(omegas):
    return MetaMeasure((1.0, EmpiricalMeasure(np.array([[w - 1.0], [w + 1.0]]))) for w in omegas)


def test_m_differential_own_span(rng):
    F, m = random_F(rng), random_meta(rng)
    md = m_differential_linear(F, m, F.features)
    for r in md.residuals:
        assert np.abs(r.values).max() <= 1e-10


def test_m_differential_translation_family():
    omegas = [-1.5, 0.0, 0.7, 2.0]
    m = translation_meta(omegas)
    F = linear_functional(monomial([2]))
    md = m_differential_linear(F, m, [coordinate(0, 1)])
    for omega, p, r in zip(omegas, md.projections, md.residuals):
        np.testing.assert_allclose(p.values[:, 0], [2 * omega, 2 * omega], atol=1e-12)
        np.testing.assert_allclose(r.values[:, 0], [-2.0, 2.0], atol=1e-12)
    assert residual_orthogonality_report(md, m) <= 1e-12


def test_m_differential_constant(rng):
    m = random_meta(rng)
    md = m_differential_linear(constant_function(2.0, 2), m, [coordinate(0, 2)])
    for p, r in zip(md.projections, md.residuals):
        assert not p.values.any() and not r.values.any()


def test_m_differential_properties(rng):
    for _ in range(10):
        F, m = random_F(rng), random_meta(rng)
        span = [gaussian_bump(rng.normal(size=2)) for _ in range(2)]
        md = m_differential_linear(F, m, span)
        assert residual_orthogonality_report(md, m) <= 1e-8
        for (_, mu), p in zip(m.components, md.projections):
            assert p.norm() ** 2 <= grad_norm(F, mu) ** 2 + 1e-10
        energies = np.array([grad_norm(F, mu) ** 2 for mu in m.measures])
        assert (md.pythagoras_defects() <= 1e-9 * (1 + energies)).all()


def test_degenerate_span_logged(caplog):
    m = MetaMeasure([(1.0, sym)])
    with caplog.at_level(logging.WARNING, logger="wsobolev.energy"):
        md = m_differential_linear(linear_functional(phi), m, [coordinate(0, 1), coordinate(0, 1)])
    assert md.regularized == (True,)
    assert "ridge" in caplog.text


def test_m_differential_errors(rng):
    m = random_meta(rng)
    with pytest.raises(ValidationError):
        m_differential_linear(random_F(rng), m, [])
    md = m_differential_linear(random_F(rng), m, [coordinate(0, 2)])
    with pytest.raises(ValidationError):
        residual_orthogonality_report(md, random_meta(rng, k=2))


def test_square_outer_energy_closed_form():
    # F = <x>^2 on mu: DF = 2 <x, mu>, so the energy is 4 mean^2
    mu = make_measure([[1.0], [2.0]], [1, 1])
    F = CylinderFunction(square_outer(), [monomial([1])])
    assert pre_cheeger(F, MetaMeasure([(1.0, mu)])) == pytest.approx(4 * 1.5**2)
