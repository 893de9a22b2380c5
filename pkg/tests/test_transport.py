import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_2x2, bures_w2, lp_w2_squared, quantile_w2_squared
from wsobolev import CheckFailedError, ValidationError
from wsobolev.geometry import EmpiricalMeasure, make_measure, second_moment
from wsobolev.transport import (
    GaussianMeasure,
    convex_estimate_check,
    duality_gap,
    gaussian_w2,
    kantorovich_potentials,
    lipschitz_pairing_bound_check,
    w2_1d,
    w2_exact,
)


def rand_measure(rng, n, d, scale=1.0):
    return EmpiricalMeasure(scale * rng.normal(size=(n, d)), rng.random(n) + 0.05)


# ---------------------------------------------------------------- w2_exact


def test_diracs():
    assert w2_exact(EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac([3.0, 4.0]))[0] == 5.0


def test_two_by_two_example():
    mu = make_measure([[0.0], [1.0]], [1, 1])
    nu = make_measure([[0.0], [2.0]], [1, 1])
    cost, plan = w2_exact(mu, nu)
    # frozen from the vertex enumeration oracle
    assert brute_force_2x2([0.0, 1.0], [0.5, 0.5], [0.0, 2.0], [0.5, 0.5]) == 0.5
    assert cost**2 == pytest.approx(0.5, abs=1e-14)
    assert plan.marginal_error() <= 1e-12


def test_identical_measures_diagonal_plan(rng):
    mu = rand_measure(rng, 7, 2)
    cost, plan = w2_exact(mu, mu)
    assert cost == 0.0
    np.testing.assert_allclose(plan.matrix, np.diag(mu.weights), atol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_against_lp_oracle(rng, d):
    for _ in range(8):
        mu, nu = rand_measure(rng, int(rng.integers(1, 12)), d), rand_measure(rng, int(rng.integers(1, 12)), d)
        expected = lp_w2_squared(mu.atoms, mu.weights, nu.atoms, nu.weights)
        assert w2_exact(mu, nu)[0] ** 2 == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_plan_marginals(rng):
    mu, nu = rand_measure(rng, 30, 2), rand_measure(rng, 25, 2)
    _, plan = w2_exact(mu, nu)
    assert plan.marginal_error() <= 1e-9
    assert (plan.matrix >= 0).all()


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        w2_exact(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([0.0, 0.0]))


def test_size_limit(rng):
    with pytest.raises(ValidationError, match="limit"):
        w2_exact(rand_measure(rng, 20, 1), rand_measure(rng, 20, 1), max_entries=100)


def test_symmetry_and_triangle(rng):
    for d in (1, 2):
        for _ in range(10):
            a, b, c = (rand_measure(rng, int(rng.integers(1, 20)), d) for _ in range(3))
            ab, ba = w2_exact(a, b)[0], w2_exact(b, a)[0]
            assert abs(ab - ba) <= 1e-10
            assert w2_exact(a, c)[0] <= ab + w2_exact(b, c)[0] + 1e-9


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    st.tuples(st.floats(-3, 3), st.floats(-3, 3)),
)
def test_translation_distance(xs, c):
    pts = np.column_stack([xs, xs[::-1]])
    mu = EmpiricalMeasure(pts)
    nu = EmpiricalMeasure(pts + np.array(c))
    assert w2_exact(mu, nu)[0] == pytest.approx(math.hypot(*c), rel=1e-7, abs=1e-7)


# ---------------------------------------------------------------- 1D closed form


def test_w2_1d_examples():
    assert w2_1d(make_measure([[0.0], [1.0]], [1, 1]), make_measure([[2.0], [3.0]], [1, 1])) == 2.0
    mu = make_measure([[0.0], [1.0], [5.0]], [1, 2, 3])
    assert w2_1d(mu, mu) == 0.0
    assert w2_1d(EmpiricalMeasure.dirac([0.0]), make_measure([[-1.0], [1.0]], [1, 1])) == 1.0


def test_w2_1d_matches_exact_and_quantile_oracle(rng):
    for _ in range(30):
        mu, nu = rand_measure(rng, int(rng.integers(1, 50)), 1), rand_measure(rng, int(rng.integers(1, 50)), 1)
        assert abs(w2_exact(mu, nu)[0] - w2_1d(mu, nu)) <= 1e-9
    mu, nu = rand_measure(rng, 5, 1), rand_measure(rng, 4, 1)
    ref = quantile_w2_squared(mu.atoms[:, 0], mu.weights, nu.atoms[:, 0], nu.weights)
    assert w2_1d(mu, nu) ** 2 == pytest.approx(ref, rel=1e-4)


def test_w2_1d_rejects_2d():
    with pytest.raises(ValidationError):
        w2_1d(EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac([0.0, 0.0]))


# ---------------------------------------------------------------- potentials


def test_potentials_normalization(rng):
    nu, mu = rand_measure(rng, 8, 2), rand_measure(rng, 6, 2)
    pair = kantorovich_potentials(nu, mu)
    assert pair.phi_star(np.zeros((1, 2)))[0] == pytest.approx(0.0, abs=1e-12)
    assert pair.phi_values.min() == pytest.approx(0.0, abs=1e-12)
    assert pair.conjugacy_residual() <= 1e-7
    assert pair.potential_identity_residual() <= 1e-6
    u, v = pair.dual_values()
    assert abs(duality_gap(nu, mu, u, v)) <= 1e-7 * (1 + pair.cost**2)


def test_potentials_lipschitz(rng):
    nu, mu = rand_measure(rng, 8, 2), rand_measure(rng, 6, 2)
    pair = kantorovich_potentials(nu, mu, R=5.0)
    y = rng.normal(size=(200, 2)) * 3
    z = rng.normal(size=(200, 2)) * 3
    ratio = np.abs(pair.phi_star(y) - pair.phi_star(z)) / np.linalg.norm(y - z, axis=1)
    assert ratio.max() <= 5.0 + 1e-12


def test_identity_transport_gives_half_square():
    grid = np.linspace(-1.0, 1.0, 9)[:, None]
    nu = EmpiricalMeasure(grid)
    pair = kantorovich_potentials(nu, nu, R=1.0)
    np.testing.assert_allclose(pair.phi_values, 0.5 * grid[:, 0] ** 2, atol=1e-12)
    np.testing.assert_allclose(pair.phi_star(grid), 0.5 * grid[:, 0] ** 2, atol=1e-12)
    np.testing.assert_array_equal(pair.argmax_map(grid), grid)


def test_translation_potential_is_affine():
    # nu concentrated at the origin, mu = nu translated by c: phi*(y) = <0, y> - phi(0) = 0 slope,
    # and the argmax map sends every y to the single source atom
    c = np.array([1.5, -0.5])
    nu = EmpiricalMeasure.dirac([0.0, 0.0])
    mu = EmpiricalMeasure(np.array([[0.0, 0.0], [0.2, 0.1]]) + c)
    pair = kantorovich_potentials(nu, mu, R=1.0)
    np.testing.assert_array_equal(pair.argmax_map(mu.atoms), np.zeros((2, 2)))
    # cluster source: slopes are the cluster atoms and the plan sends each to its translate
    cluster = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    pair = kantorovich_potentials(EmpiricalMeasure(cluster), EmpiricalMeasure(cluster + c), R=1.0)
    np.testing.assert_allclose(pair.transport_gradient(cluster + c), cluster, atol=1e-12)
    assert pair.cost == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_support_violation():
    with pytest.raises(ValidationError, match="support"):
        kantorovich_potentials(EmpiricalMeasure.dirac([2.0]), EmpiricalMeasure.dirac([0.0]), R=1.0)


def test_duality_gap_examples(rng):
    mu, nu = rand_measure(rng, 5, 1), rand_measure(rng, 4, 1)
    w2sq = w2_exact(mu, nu)[0] ** 2
    assert duality_gap(mu, nu, np.zeros(5), np.zeros(4)) == pytest.approx(w2sq, rel=1e-12)
    assert duality_gap(mu, mu, np.zeros(5), np.zeros(5)) == 0.0
    with pytest.raises(ValidationError, match="admissibility"):
        duality_gap(mu, nu, np.full(5, 100.0), np.zeros(4))


def test_random_1d_gap_against_lp(rng):
    for _ in range(10):
        mu, nu = rand_measure(rng, 10, 1), rand_measure(rng, 10, 1)
        pair = kantorovich_potentials(mu, nu)
        u, v = pair.dual_values()
        dual = mu.weights @ u + nu.weights @ v
        assert dual == pytest.approx(lp_w2_squared(mu.atoms, mu.weights, nu.atoms, nu.weights), abs=1e-7)


def test_convex_estimate(rng):
    nu, mu = rand_measure(rng, 6, 1, 0.5), rand_measure(rng, 6, 1)
    pair = kantorovich_potentials(nu, mu, R=2.0)
    sup, bound = convex_estimate_check(pair, 1.0)
    assert sup <= bound + 1e-9


# ---------------------------------------------------------------- Gaussians


def test_gaussian_examples():
    assert gaussian_w2(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([2.0], [[1.0]])) == 2.0
    g = GaussianMeasure([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
    assert gaussian_w2(g, g) <= 1e-7
    val = gaussian_w2(GaussianMeasure([0.0, 0.0], np.eye(2)), GaussianMeasure([0.0, 0.0], 4 * np.eye(2)))
    assert val == pytest.approx(math.sqrt(2.0), abs=1e-12)


def test_gaussian_against_sqrtm_oracle(rng):
    for _ in range(10):
        A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        S1, S2 = A @ A.T + 0.1 * np.eye(3), B @ B.T
        m1, m2 = rng.normal(size=3), rng.normal(size=3)
        got = gaussian_w2(GaussianMeasure(m1, S1), GaussianMeasure(m2, S2))
        assert got == pytest.approx(bures_w2(m1, S1, m2, S2), rel=1e-8, abs=1e-8)


def test_gaussian_validation():
    with pytest.raises(ValidationError):
        GaussianMeasure([0.0], [[-1.0]])
    with pytest.raises(ValidationError):
        GaussianMeasure([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    # tiny negative eigenvalue is clamped
    g = GaussianMeasure([0.0], [[-1e-14]])
    assert g.cov[0, 0] == 0.0


def test_gaussian_empirical(rng):
    g1, g2 = GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([2.0], [[1.0]])
    x, y = g1.sample(1000, rng), g2.sample(1000, rng)
    emp = w2_exact(EmpiricalMeasure(x), EmpiricalMeasure(y))[0]
    assert abs(emp - 2.0) / 2.0 <= 0.05


# ---------------------------------------------------------------- Lipschitz pairing


def test_lipschitz_pairing_examples():
    mu = make_measure([[0.0], [1.0]], [1, 1])
    nu = make_measure([[0.0], [2.0]], [1, 1])
    lhs, rhs = lipschitz_pairing_bound_check(lambda x: np.full(x.shape[0], 3.0), 1.0, mu, nu)
    assert lhs == 0.0
    lhs, rhs = lipschitz_pairing_bound_check(lambda x: x[:, 0], 1.0, EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0]))
    assert (lhs, rhs) == (-1.0, 1.0)
    lhs, rhs = lipschitz_pairing_bound_check(lambda x: x[:, 0], 1.0, mu, nu)
    assert lhs == pytest.approx(-0.5)
    assert rhs == pytest.approx(math.sqrt(0.5))


def test_lipschitz_pairing_precondition():
    with pytest.raises(ValidationError, match="Lipschitz"):
        lipschitz_pairing_bound_check(lambda x: 5 * x[:, 0], 1.0, EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0]))


def test_potential_identity_random(rng):
    for d in (1, 2):
        nu, mu = rand_measure(rng, 9, d), rand_measure(rng, 7, d)
        pair = kantorovich_potentials(nu, mu)
        lhs = nu.weights @ pair.phi_values + mu.weights @ pair.phi_star(mu.atoms)
        rhs = 0.5 * second_moment(nu) + 0.5 * second_moment(mu) - 0.5 * pair.cost**2
        assert lhs == pytest.approx(rhs, abs=1e-6)


def test_check_failed_is_assertion():
    assert issubclass(CheckFailedError, AssertionError)
