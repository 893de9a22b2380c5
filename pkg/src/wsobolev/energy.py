"""Pre-Cheeger energies over a meta-measure, Sobolev regression and the m-differential."""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import CheckFailedError, ValidationError, check_positive
from .cylinder import CylinderFunction, OuterFunction, grad_norm
from .geometry import EmpiricalMeasure, MetaMeasure, VectorField, lift_integral

logger = logging.getLogger(__name__)

__all__ = [
    "pre_cheeger",
    "pre_cheeger_bilinear",
    "carre_du_champ",
    "parallelogram_check",
    "SobolevRegressor",
    "SobolevFit",
    "sobolev_fit",
    "MDifferential",
    "m_differential_linear",
    "residual_orthogonality_report",
]

RIDGE = 1e-12


def pre_cheeger(F, m, p=2.0):
    """sum_i mass_i ||DF[mu_i]||^p."""
    p = float(p)
    if not 1.0 < p < np.inf:
        raise ValidationError(f"exponent p must lie in (1, inf), got {p}")
    return float(sum(mass * grad_norm(F, mu) ** p for mass, mu in m.components))


def _pointwise_inner(F, G):
    def H(mu, x):
        return np.einsum("ij,ij->i", F.differential(mu, x), G.differential(mu, x))

    return H


def pre_cheeger_bilinear(F, G, m):
    """int <DF, DG> against the lifted measure of ``m``."""
    return lift_integral(m, _pointwise_inner(F, G))


def carre_du_champ(F, G, mu):
    """Gamma(F, G)[mu] = int <DF(mu, x), DG(mu, x)> dmu(x)."""
    return float(mu.weights @ _pointwise_inner(F, G)(mu, mu.atoms))


def parallelogram_check(F, G, m, rtol=1e-10):
    """Defect of the parallelogram law for pCE_2, checked against ``rtol (1 + pCE(F) + pCE(G))``."""
    eF, eG = pre_cheeger(F, m), pre_cheeger(G, m)
    defect = abs(pre_cheeger(F + G, m) + pre_cheeger(F - G, m) - 2 * eF - 2 * eG)
    if defect > rtol * (1.0 + eF + eG):
        raise CheckFailedError("parallelogram", f"defect {defect:.3e} exceeds {rtol:g} (1 + {eF:.3g} + {eG:.3g})")
    return defect


# ---------------------------------------------------------------- Sobolev regression


def _design(dictionary, measures):
    A = np.ones((len(measures), len(dictionary) + 1))
    for i, mu in enumerate(measures):
        for j, f in enumerate(dictionary):
            A[i, j + 1] = mu.weights @ f.value(mu.atoms)
    return A


def _gradient_gram(dictionary, measures, masses):
    J = len(dictionary)
    K = np.zeros((J + 1, J + 1))
    for mass, mu in zip(masses, measures):
        grads = np.stack([f.gradient(mu.atoms) for f in dictionary])  # (J, n, d)
        K[1:, 1:] += mass * np.einsum("a,jak,lak->jl", mu.weights, grads, grads)
    return K


class SobolevRegressor(RegressorMixin, BaseEstimator):
    """Least squares on measures with a pre-Cheeger penalty.

    Fits F_c(mu) = c_0 + sum_j c_j <phi_j, mu> by minimizing

        sum_i w_i (F_c(mu_i) - y_i)^2 + lam * pCE_2(F_c)

    where the energy is taken over the meta-measure sum_i w_i delta_{mu_i}.
    ``X`` is a sequence of :class:`EmpiricalMeasure`, ``sample_weight`` the
    masses w_i (all ones by default).

    Parameters
    ----------
    dictionary : list of SmoothFeature
    lam : float, default=0.0
        Weight of the energy penalty.
    """

    def __init__(self, dictionary=None, lam=0.0):
        self.dictionary = dictionary
        self.lam = lam

    def _check_X(self, X):
        X = list(X)
        if not X:
            raise ValidationError("no measures given")
        for i, mu in enumerate(X):
            if not isinstance(mu, EmpiricalMeasure):
                raise ValidationError(f"X[{i}] is not an EmpiricalMeasure")
        return X

    def fit(self, X, y, sample_weight=None):
        X = self._check_X(X)
        y = np.asarray(y, dtype=float).ravel()
        if y.size != len(X):
            raise ValidationError(f"{len(X)} measures but {y.size} targets")
        if not self.dictionary:
            raise ValidationError("dictionary is empty")
        lam = check_positive(self.lam, "lam", strict=False)
        w = np.ones(len(X)) if sample_weight is None else np.asarray(sample_weight, dtype=float).ravel()
        if w.size != len(X) or (w <= 0).any():
            raise ValidationError("sample_weight must hold one positive mass per measure")
        A = _design(self.dictionary, X)
        K = _gradient_gram(self.dictionary, X, w)
        normal = A.T @ (w[:, None] * A) + lam * K
        rhs = A.T @ (w * y)
        scale = max(1.0, float(np.abs(normal).max()))
        rank = int(np.linalg.matrix_rank(normal, tol=1e-12 * scale))
        if rank < normal.shape[0]:
            raise ValidationError(f"normal equations are singular (rank {rank} of {normal.shape[0]})")
        c = np.linalg.solve(normal, rhs)
        self.n_features_in_ = len(self.dictionary)
        self.intercept_ = float(c[0])
        self.coef_ = c[1:]
        self.rank_ = rank
        self.normal_residual_ = float(np.linalg.norm(normal @ c - rhs) / max(np.linalg.norm(rhs), 1e-300))
        self.misfit_ = float(w @ (A @ c - y) ** 2)
        self.energy_ = float(c @ K @ c)
        self.objective_ = self.misfit_ + lam * self.energy_
        self.meta_measure_ = MetaMeasure(zip(w, X))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = self._check_X(X)
        return self.intercept_ + _design(self.dictionary, X)[:, 1:] @ self.coef_

    def to_cylinder(self):
        """The fitted function as a :class:`CylinderFunction`."""
        check_is_fitted(self, "coef_")
        c0, c = self.intercept_, np.array(self.coef_)
        outer = OuterFunction(lambda s: c0 + c @ s, lambda s: c, c.size, name="linear")
        return CylinderFunction(outer, list(self.dictionary))


@dataclass(frozen=True)
class SobolevFit:
    dictionary: list
    coefficients: np.ndarray  # [c_0, c_1, ..., c_J]
    lam: float
    misfit: float
    energy: float
    normal_residual: float

    def to_dict(self):
        return {
            "coefficients": self.coefficients.tolist(),
            "lambda": self.lam,
            "misfit": self.misfit,
            "energy": self.energy,
            "normal_residual": self.normal_residual,
            "dictionary": [f.name for f in self.dictionary],
        }


def sobolev_fit(samples, m, dictionary, lam):
    """Fit on ``samples = [(mu_i, y_i)]`` whose measures are the components of ``m``."""
    samples = list(samples)
    if len(samples) != len(m):
        raise ValidationError(f"{len(samples)} samples for a meta-measure with {len(m)} components")
    for i, ((mu, _), comp) in enumerate(zip(samples, m.measures)):
        if mu != comp:
            raise ValidationError(f"sample {i} does not match component {i} of the meta-measure")
    est = SobolevRegressor(dictionary=list(dictionary), lam=lam)
    est.fit([mu for mu, _ in samples], [y for _, y in samples], sample_weight=m.masses)
    return SobolevFit(
        dictionary=list(dictionary),
        coefficients=np.concatenate([[est.intercept_], est.coef_]),
        lam=float(lam),
        misfit=est.misfit_,
        energy=est.energy_,
        normal_residual=est.normal_residual_,
    )


# ---------------------------------------------------------------- m-differential


@dataclass(frozen=True)
class MDifferential:
    """Per-component projection of DF onto a span of gradient fields, and the residual."""

    projections: tuple
    residuals: tuple
    coefficients: tuple
    regularized: tuple

    def __len__(self):
        return len(self.projections)

    def pythagoras_defects(self):
        """|‖DF‖^2 - ‖proj‖^2 - ‖res‖^2| per component."""
        out = []
        for p, r in zip(self.projections, self.residuals):
            total = VectorField(p.measure, p.values + r.values).norm() ** 2
            out.append(abs(total - p.norm() ** 2 - r.norm() ** 2))
        return np.array(out)


def _project(values, basis, weights, ridge):
    # basis: (J, n, d); weighted least squares in L^2(mu; R^d)
    J = basis.shape[0]
    sw = np.sqrt(weights)[:, None]
    design = (basis * sw[None]).reshape(J, -1).T
    target = (values * sw).ravel()
    gram = design.T @ design
    scale = max(1.0, float(np.abs(gram).max()))
    degenerate = np.linalg.matrix_rank(gram, tol=1e-12 * scale) < J
    if degenerate:
        h = np.linalg.solve(gram + ridge * np.eye(J), design.T @ target)
    else:
        h = np.linalg.lstsq(design, target, rcond=None)[0]
    return h, np.einsum("j,jak->ak", h, basis), degenerate


def m_differential_linear(F, m, span, ridge=RIDGE):
    """Project DF[mu_i] onto { sum_j h_j grad phi_j } in L^2(mu_i) for every component."""
    span = list(span)
    if not span:
        raise ValidationError("span is empty")
    projections, residuals, coefs, flags = [], [], [], []
    for i, (_, mu) in enumerate(m.components):
        df = F.differential(mu, mu.atoms)
        basis = np.stack([f.gradient(mu.atoms) for f in span])
        h, proj, degenerate = _project(df, basis, mu.weights, ridge)
        if degenerate:
            logger.warning("component %d: degenerate span Gram matrix, ridge %g applied", i, ridge)
        projections.append(VectorField(mu, proj))
        residuals.append(VectorField(mu, df - proj))
        coefs.append(h)
        flags.append(bool(degenerate))
    return MDifferential(tuple(projections), tuple(residuals), tuple(coefs), tuple(flags))


def residual_orthogonality_report(md, m=None, tol=1e-8):
    """max_i |int <D_m F[mu_i], residual_i> dmu_i|."""
    if m is not None and len(m) != len(md):
        raise ValidationError("meta-measure and m-differential have different component counts")
    worst = max(abs(p.inner(r)) for p, r in zip(md.projections, md.residuals))
    if worst > tol:
        raise CheckFailedError("residual_orthogonality", f"{worst:.3e} > {tol:g}")
    return float(worst)
