import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsobolev.geometry import (
    EmpiricalMeasure,
    MetaMeasure,
    VectorField,
    lift_integral,
    load_measure,
    load_meta_measure,
    make_measure,
    mean,
    measure_to_dict,
    meta_measure_to_dict,
    pushforward,
    second_moment,
)
from wsobolev import ValidationError
from wsobolev.transport import w2_exact

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_normalizes_weights():
    mu = make_measure([[0.0], [1.0]], [1, 1])
    np.testing.assert_array_equal(mu.weights, [0.5, 0.5])


def test_merges_duplicates():
    mu = make_measure([[0.0], [0.0]], [0.3, 0.7])
    assert mu.size == 1
    assert mu.weights[0] == 1.0
    assert mu.atoms[0, 0] == 0.0


def test_merge_keeps_first_occurrence_order():
    mu = make_measure([[2.0], [1.0], [2.0]], [1, 1, 2])
    np.testing.assert_array_equal(mu.atoms.ravel(), [2.0, 1.0])
    np.testing.assert_allclose(mu.weights, [0.75, 0.25])


def test_near_duplicates_not_merged():
    assert make_measure([[0.0], [1e-15]], [1, 1]).size == 2


def test_zero_weights_dropped():
    mu = make_measure([[0.0], [1.0], [2.0]], [1, 0, 1])
    np.testing.assert_array_equal(mu.atoms.ravel(), [0.0, 2.0])


@pytest.mark.parametrize(
    "atoms, weights",
    [
        ([[1.0, 2.0]], [2, 3]),  # length mismatch
        ([], []),
        ([[0.0]], [-1.0]),
        ([[0.0], [1.0]], [0.0, 0.0]),
        ([[0.0], [1.0, 2.0]], [1, 1]),
        ([[np.nan]], [1.0]),
    ],
)
def test_invalid_measures(atoms, weights):
    with pytest.raises(ValidationError):
        make_measure(atoms, weights)


def test_ragged_error_names_index():
    with pytest.raises(ValidationError, match="1"):
        make_measure([[0.0], [1.0, 2.0]], [1, 1])


def test_immutable():
    mu = make_measure([[0.0]], [1])
    with pytest.raises(ValueError):
        mu.atoms[0, 0] = 3.0


@pytest.mark.parametrize(
    "atoms, weights, expected",
    [([[0.0]], [1], 0.0), ([[-1.0], [1.0]], [1, 1], 1.0), ([[0.0], [2.0]], [1, 1], 2.0)],
)
def test_second_moment_examples(atoms, weights, expected):
    assert second_moment(make_measure(atoms, weights)) == expected


def test_second_moment_is_w2_to_origin(rng):
    for _ in range(10):
        mu = EmpiricalMeasure(rng.normal(size=(6, 2)), rng.random(6) + 0.1)
        assert second_moment(mu) == pytest.approx(w2_exact(mu, EmpiricalMeasure.dirac([0.0, 0.0]))[0] ** 2, rel=1e-12)


def test_pushforward_examples(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)))
    assert pushforward(mu, lambda x: x) == mu
    v = np.array([0.3, -1.0])
    shifted = pushforward(EmpiricalMeasure.dirac([0.0, 0.0]), lambda x: x + 0.5 * v)
    np.testing.assert_array_equal(shifted.atoms, [0.5 * v])
    collapsed = pushforward(mu, lambda x: np.zeros_like(x))
    assert collapsed.size == 1 and collapsed.weights[0] == 1.0


def test_pushforward_rejects_nonfinite():
    with pytest.raises(ValidationError):
        with np.errstate(divide="ignore"):
            pushforward(make_measure([[1.0]], [1]), lambda x: x / 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=8), st.tuples(coords, coords))
def test_translated_second_moment(points, c):
    mu = EmpiricalMeasure(np.array(points))
    c = np.array(c)
    moved = pushforward(mu, lambda x: x + c)
    expected = second_moment(mu) + 2 * c @ mean(mu) + c @ c
    assert second_moment(moved) == pytest.approx(expected, rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(coords, min_size=1, max_size=8))
def test_construction_idempotent(xs):
    mu = EmpiricalMeasure(np.array(xs)[:, None])
    again = EmpiricalMeasure(mu.atoms, mu.weights)
    assert again == mu


def test_lift_integral_examples():
    sym = make_measure([[-1.0], [1.0]], [1, 1])
    m = MetaMeasure([(1.0, sym)])
    assert lift_integral(m, lambda mu, x: 1.0) == 1.0
    assert lift_integral(m, lambda mu, x: (x**2).sum(1)) == 1.0
    m2 = MetaMeasure([(0.5, EmpiricalMeasure.dirac([0.0])), (0.5, EmpiricalMeasure.dirac([2.0]))])
    assert lift_integral(m2, lambda mu, x: second_moment(mu)) == 2.0


def test_lift_integral_linear(rng):
    comps = [(rng.random() + 0.1, EmpiricalMeasure(rng.normal(size=(4, 1)))) for _ in range(3)]
    m = MetaMeasure(comps)
    H1 = lambda mu, x: np.sin(x[:, 0])  # noqa: E731
    H2 = lambda mu, x: x[:, 0] ** 2 + second_moment(mu)  # noqa: E731
    both = lift_integral(m, lambda mu, x: 2 * H1(mu, x) - 3 * H2(mu, x))
    assert both == pytest.approx(2 * lift_integral(m, H1) - 3 * lift_integral(m, H2), rel=1e-13)
    assert lift_integral(m.scaled(3.0), H2) == pytest.approx(3 * lift_integral(m, H2), rel=1e-13)


def test_lift_integral_nonfinite():
    m = MetaMeasure([(1.0, make_measure([[0.0], [1.0]], [1, 1]))])
    with pytest.raises(ValidationError, match="atom 0"):
        with np.errstate(divide="ignore"):
            lift_integral(m, lambda mu, x: 1.0 / x[:, 0])


def test_meta_measure_validation():
    with pytest.raises(ValidationError):
        MetaMeasure([])
    with pytest.raises(ValidationError):
        MetaMeasure([(0.0, EmpiricalMeasure.dirac([0.0]))])
    with pytest.raises(ValidationError):
        MetaMeasure([(1.0, EmpiricalMeasure.dirac([0.0])), (1.0, EmpiricalMeasure.dirac([0.0, 1.0]))])
    m = MetaMeasure([(2.0, EmpiricalMeasure.dirac([0.0])), (6.0, EmpiricalMeasure.dirac([1.0]))])
    assert m.total_mass == 8.0
    np.testing.assert_allclose(m.normalized().masses, [0.25, 0.75])


def test_vector_field():
    mu = make_measure([[0.0, 0.0], [1.0, 0.0]], [1, 3])
    u = VectorField(mu, [[1.0, 0.0], [0.0, 2.0]])
    assert u.norm() == pytest.approx(np.sqrt(0.25 + 0.75 * 4))
    with pytest.raises(ValidationError):
        VectorField(mu, [[1.0, 0.0]])


def test_file_round_trip(tmp_path):
    mu = make_measure([[0.0, 1.0], [2.0, 3.0]], [1, 3])
    p = tmp_path / "mu.json"
    p.write_text(json.dumps(measure_to_dict(mu)))
    assert load_measure(str(p)) == mu
    m = MetaMeasure([(2.0, mu), (1.0, EmpiricalMeasure.dirac([5.0, 5.0]))])
    q = tmp_path / "m.json"
    q.write_text(json.dumps(meta_measure_to_dict(m)))
    back = load_meta_measure(str(q))
    assert back.measures[0] == mu and list(back.masses) == [2.0, 1.0]


def test_meta_measure_relative_path(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"dim": 1, "atoms": [[1.0]]}))
    (tmp_path / "m.json").write_text(json.dumps({"components": [{"mass": 1, "measure": "a.json"}]}))
    assert load_meta_measure(str(tmp_path / "m.json")).measures[0].atoms[0, 0] == 1.0


def test_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere.json"):
        load_measure(str(tmp_path / "nowhere.json"))
    with pytest.raises(ValidationError, match="unknown"):
        load_measure({"dim": 1, "atoms": [[0.0]], "extra": 1})
    with pytest.raises(ValidationError, match=r"atoms\[1\]"):
        load_measure({"dim": 2, "atoms": [[0.0, 1.0], [1.0]]})
    with pytest.raises(ValidationError, match=r"components\[0\]"):
        load_meta_measure({"components": [{"mass": 1, "measure": {"atoms": []}}]})
