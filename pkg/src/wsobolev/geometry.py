"""Finitely supported measures, meta-measures and integration against the lifted measure."""

import json
import os
from dataclasses import dataclass

import numpy as np

from ._validation import (
    ValidationError,
    check_finite_values,
    check_positive,
    check_ragged_points,
    check_weights,
)

__all__ = [
    "EmpiricalMeasure",
    "MetaMeasure",
    "VectorField",
    "make_measure",
    "second_moment",
    "mean",
    "pushforward",
    "lift_integral",
    "load_measure",
    "load_meta_measure",
    "measure_to_dict",
    "meta_measure_to_dict",
]


def _merge(atoms, weights):
    # exact coordinate equality, order of first occurrence preserved
    _, first, inverse = np.unique(atoms, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    if first.size == atoms.shape[0]:
        return atoms, weights
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    merged = np.zeros(first.size)
    np.add.at(merged, rank[inverse], weights)
    return atoms[first[order]], merged


class EmpiricalMeasure:
    """A finitely supported probability measure on R^d.

    Atoms are stored as an (n, d) array; zero-weight atoms are dropped and
    exactly coincident atoms are merged, so the atom set is the support.
    Instances are immutable.
    """

    __slots__ = ("_atoms", "_weights")

    def __init__(self, atoms, weights=None):
        atoms = check_ragged_points(atoms, name="atoms")
        if atoms.shape[0] == 0:
            raise ValidationError("a measure needs at least one atom")
        if weights is None:
            weights = np.ones(atoms.shape[0])
        weights = check_weights(weights, atoms.shape[0])
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        atoms, weights = _merge(atoms, weights)
        total = weights.sum()
        # already normalized up to rounding: keep the weights bit for bit
        if abs(total - 1.0) > 8 * np.finfo(float).eps:
            weights = weights / total
        atoms.flags.writeable = False
        weights.flags.writeable = False
        self._atoms = atoms
        self._weights = weights

    @property
    def atoms(self):
        return self._atoms

    @property
    def weights(self):
        return self._weights

    @property
    def dim(self):
        return self._atoms.shape[1]

    @property
    def size(self):
        return self._atoms.shape[0]

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.size}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            self._atoms.shape == other._atoms.shape
            and np.array_equal(self._atoms, other._atoms)
            and np.array_equal(self._weights, other._weights)
        )

    __hash__ = None

    def integrate(self, f):
        """Integral of a vectorized function ``f((n, d) array) -> (n,)``."""
        values = check_finite_values(np.broadcast_to(f(self._atoms), (self.size,)), "integrand")
        return float(self._weights @ values)

    @classmethod
    def dirac(cls, point):
        return cls(np.atleast_2d(np.asarray(point, dtype=float)))


def make_measure(atoms, weights):
    """Build an :class:`EmpiricalMeasure`, renormalizing ``weights`` and merging duplicates."""
    return EmpiricalMeasure(atoms, weights)


def second_moment(mu):
    """Sum of w_i |x_i|^2, which equals W_2^2(mu, delta_0)."""
    return float(mu.weights @ np.einsum("ij,ij->i", mu.atoms, mu.atoms))


def mean(mu):
    return mu.weights @ mu.atoms


def pushforward(mu, transform):
    """Image of ``mu`` under ``transform``.

    ``transform`` receives the (n, d) atom array and returns the mapped
    (n, d') array; weights travel with their atoms and images that coincide
    are merged.
    """
    image = np.asarray(transform(np.array(mu.atoms)), dtype=float)
    if image.ndim == 1 and mu.dim == 1:
        image = image.reshape(-1, 1)
    if image.ndim != 2 or image.shape[0] != mu.size:
        raise ValidationError(f"map returned shape {image.shape} for {mu.size} atoms")
    bad = np.flatnonzero(~np.isfinite(image).all(axis=1))
    if bad.size:
        raise ValidationError(f"map produced non-finite coordinates at atom {bad[0]}")
    return EmpiricalMeasure(image, mu.weights)


@dataclass(frozen=True)
class VectorField:
    """A vector in L^2(mu; R^d), one value per atom of ``measure``."""

    measure: EmpiricalMeasure
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1 and self.measure.dim == 1:
            values = values.reshape(-1, 1)
        if values.shape != self.measure.atoms.shape:
            raise ValidationError(
                f"vector field of shape {values.shape} does not match atoms {self.measure.atoms.shape}"
            )
        check_finite_values(values, "vector field")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, measure, u):
        return cls(measure, u(np.array(measure.atoms)))

    def norm(self):
        return float(np.sqrt(self.measure.weights @ np.einsum("ij,ij->i", self.values, self.values)))

    def inner(self, other):
        if other.measure is not self.measure and other.measure != self.measure:
            raise ValidationError("vector fields live on different measures")
        return float(self.measure.weights @ np.einsum("ij,ij->i", self.values, other.values))


class MetaMeasure:
    """Finite positive combination of empirical measures.

    Masses need not sum to one; use :meth:`normalized` when probability
    semantics are needed.
    """

    __slots__ = ("_masses", "_measures")

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValidationError("a meta-measure needs at least one component")
        masses = []
        measures = []
        for i, (mass, mu) in enumerate(components):
            mass = float(mass)
            if not np.isfinite(mass) or mass <= 0:
                raise ValidationError(f"components[{i}].mass = {mass} must be positive and finite")
            if not isinstance(mu, EmpiricalMeasure):
                raise ValidationError(f"components[{i}].measure is not an EmpiricalMeasure")
            if measures and mu.dim != measures[0].dim:
                raise ValidationError(f"components[{i}] has dimension {mu.dim}, expected {measures[0].dim}")
            masses.append(mass)
            measures.append(mu)
        self._masses = np.array(masses)
        self._masses.flags.writeable = False
        self._measures = tuple(measures)

    @classmethod
    def uniform(cls, measures, total_mass=1.0):
        measures = list(measures)
        return cls((total_mass / len(measures), mu) for mu in measures)

    @property
    def masses(self):
        return self._masses

    @property
    def measures(self):
        return self._measures

    @property
    def components(self):
        return list(zip(self._masses.tolist(), self._measures))

    @property
    def total_mass(self):
        return float(self._masses.sum())

    @property
    def dim(self):
        return self._measures[0].dim

    def __len__(self):
        return len(self._measures)

    def __iter__(self):
        return iter(self.components)

    def __repr__(self):
        return f"MetaMeasure(components={len(self)}, total_mass={self.total_mass:g})"

    def normalized(self):
        return MetaMeasure((m / self.total_mass, mu) for m, mu in self.components)

    def scaled(self, factor):
        factor = check_positive(factor, "factor")
        return MetaMeasure((factor * m, mu) for m, mu in self.components)


def lift_integral(m, H):
    """Integrate ``H`` against the lifted measure of ``m``.

    ``H(mu, atoms)`` gets a component measure and its (n, d) atom array and
    returns one value per atom (a scalar is broadcast).  The result is
    sum_i mass_i sum_j w_ij H(mu_i, x_ij), accumulated in stored order.
    """
    total = 0.0
    for i, (mass, mu) in enumerate(m.components):
        values = np.broadcast_to(np.asarray(H(mu, np.array(mu.atoms)), dtype=float), (mu.size,))
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValidationError(f"integrand is not finite on component {i}, atom {bad[0]}")
        total += mass * float(mu.weights @ values)
    return total


# ---------------------------------------------------------------- file formats


def measure_to_dict(mu):
    return {"dim": mu.dim, "atoms": mu.atoms.tolist(), "weights": mu.weights.tolist()}


def meta_measure_to_dict(m):
    return {"components": [{"mass": mass, "measure": measure_to_dict(mu)} for mass, mu in m.components]}


def _read_json(source):
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source) as fh:
                return json.load(fh)
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"no such file: {source}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{source}: invalid JSON ({exc})") from exc
    return source


def load_measure(source):
    """Read ``{"dim": d, "atoms": [...], "weights": [...]}`` from a path or a dict."""
    data = _read_json(source)
    if not isinstance(data, dict):
        raise ValidationError("measure must be a JSON object")
    unknown = set(data) - {"dim", "atoms", "weights"}
    if unknown:
        raise ValidationError(f"unknown measure keys: {sorted(unknown)}")
    if "atoms" not in data:
        raise ValidationError("measure is missing 'atoms'")
    atoms = data["atoms"]
    if not atoms:
        raise ValidationError("measure has no atoms")
    dim = data.get("dim")
    rows = [np.atleast_1d(np.asarray(a, dtype=float)) for a in atoms]
    if dim is not None:
        for i, row in enumerate(rows):
            if row.shape[0] != int(dim):
                raise ValidationError(f"atoms[{i}] has dimension {row.shape[0]}, expected {dim}")
    weights = data.get("weights")
    if weights is None:
        weights = np.ones(len(rows))
    return EmpiricalMeasure(check_ragged_points(rows), weights)


def load_meta_measure(source):
    """Read ``{"components": [{"mass": m, "measure": <inline or path>}]}``.

    Relative measure paths are resolved against the meta-measure file.
    """
    data = _read_json(source)
    base = os.path.dirname(os.fspath(source)) if isinstance(source, (str, os.PathLike)) else ""
    if not isinstance(data, dict) or "components" not in data:
        raise ValidationError("meta-measure must be an object with 'components'")
    unknown = set(data) - {"components"}
    if unknown:
        raise ValidationError(f"unknown meta-measure keys: {sorted(unknown)}")
    comps = []
    for i, comp in enumerate(data["components"]):
        if not isinstance(comp, dict) or "mass" not in comp or "measure" not in comp:
            raise ValidationError(f"components[{i}] needs 'mass' and 'measure'")
        ref = comp["measure"]
        if isinstance(ref, str):
            ref = ref if os.path.isabs(ref) else os.path.join(base, ref)
        try:
            mu = load_measure(ref)
        except ValidationError as exc:
            raise ValidationError(f"components[{i}].measure: {exc}") from exc
        comps.append((comp["mass"], mu))
    return MetaMeasure(comps)
