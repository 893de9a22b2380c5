"""Mollified Wasserstein distance functionals and their potential dictionaries.

Measures are smoothed with the kernel kappa(z) ~ (1 - |z|^2)^3 on the unit
ball, scaled by eps.  Convolution is replaced by a fixed symmetric quadrature,
so a mollified empirical measure is again empirical and every transport
quantity below is computed exactly on these surrogates.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre
from scipy.stats import qmc
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import CheckFailedError, ValidationError, check_finite_values
from .geometry import EmpiricalMeasure, second_moment
from .transport import kantorovich_potentials, unit_ball_volume, w2_exact

__all__ = [
    "MollifierFamily",
    "PotentialDictionary",
    "DictionaryEntry",
    "DistanceApproximator",
    "TruncationMap",
    "arctan_truncation",
    "identity_truncation",
    "mollify",
    "hat_measure",
    "contraction_check",
    "f_nu_eps",
    "build_dictionary",
    "g_eps_k",
    "g_lipschitz_check",
    "gradient_bound_check",
    "a_lower_bound_check",
    "truncation_compose",
    "quadrature_refinement_report",
    "DEFAULT_ORDER",
    "DEFAULT_UNIFORM",
]

DEFAULT_ORDER = {1: 8, 2: 3, 3: 2}
DEFAULT_UNIFORM = {1: 32, 2: 64, 3: 128}
QUADRATURE_SLACK = 1e-3
SOLVER_SLACK = 1e-6


# ---------------------------------------------------------------- kernel quadrature


def _antisymmetrize(z, w):
    # Gauss nodes come sorted and symmetric up to rounding; make the symmetry exact
    return 0.5 * (z - z[::-1]), 0.5 * (w + w[::-1])


def _radial_rule(dim, n):
    """Nodes r_i in (0, 1) and weights for int_0^1 g(r) r^(d-1) (1 - r^2)^3 dr, normalized."""
    # with s = r^2 the weight becomes s^(d/2 - 1) (1 - s)^3 ds up to a constant
    t, w = roots_jacobi(n, 3.0, dim / 2.0 - 1.0)
    return np.sqrt(0.5 * (t + 1.0)), w / w.sum()


def _kernel_nodes(dim, order):
    if dim == 1:
        z, w = roots_jacobi(2 * order, 3.0, 3.0)
        z, w = _antisymmetrize(z, w)
        return z[:, None], w / w.sum()
    r, wr = _radial_rule(dim, order)
    if dim == 2:
        m = 2 * (order + 1)
        theta = 2.0 * np.pi * np.arange(m // 2) / m
        half = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        wdir = np.full(m // 2, 1.0 / m)
    elif dim == 3:
        c, wc = roots_legendre(order + 1)
        c, wc = _antisymmetrize(c, wc)
        m = 2 * (order + 1)
        phi = 2.0 * np.pi * np.arange(m // 2) / m
        cc, pp = np.meshgrid(c, phi, indexing="ij")
        sc = np.sqrt(np.clip(1.0 - cc**2, 0.0, None))
        half = np.stack([sc * np.cos(pp), sc * np.sin(pp), cc], axis=-1).reshape(-1, 3)
        wdir = (wc[:, None] / 2.0 * np.full(m // 2, 1.0 / m)[None, :]).ravel()
    else:
        raise ValidationError(f"kernel quadrature is available for dimensions 1 to 3, got {dim}")
    dirs = np.concatenate([half, -half])
    wdir = np.concatenate([wdir, wdir])
    nodes = (r[:, None, None] * dirs[None]).reshape(-1, dim)
    weights = (wr[:, None] * wdir[None, :]).ravel()
    return nodes, weights / weights.sum()


class MollifierFamily:
    """Scaled kernel kappa_eps with its quadrature.

    ``offsets`` are eps times the unit-ball nodes; the node set is closed
    under negation, so mollification preserves means exactly.

    Attributes
    ----------
    C_eps : float
        Second moment eps^2 d / (d + 8) of kappa_eps.
    C_eps_root : float
        Its square root, the constant entering the Lipschitz bound of G.
    """

    def __init__(self, eps, dim, order=None):
        eps = float(eps)
        if not 0.0 < eps < 1.0:
            raise ValidationError(f"eps must lie in (0, 1), got {eps}")
        dim = int(dim)
        order = DEFAULT_ORDER.get(dim, 2) if order is None else int(order)
        if order < 1:
            raise ValidationError(f"quadrature order must be positive, got {order}")
        nodes, weights = _kernel_nodes(dim, order)
        self.eps = eps
        self.dim = dim
        self.order = order
        self.nodes = nodes
        self.weights = weights
        self.offsets = eps * nodes
        self.C_eps = eps**2 * dim / (dim + 8.0)
        self.C_eps_root = math.sqrt(self.C_eps)
        for arr in (self.nodes, self.weights, self.offsets):
            arr.flags.writeable = False

    def __repr__(self):
        return f"MollifierFamily(eps={self.eps:g}, dim={self.dim}, nodes={self.weights.size})"

    @property
    def radius(self):
        return 1.0 / self.eps

    def kernel(self, z):
        """Density of kappa at the rows of ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        d = self.dim
        # int_B (1 - |z|^2)^3 dz = omega_d * 48 / ((d + 2)(d + 4)(d + 6))
        norm = unit_ball_volume(d) * 48.0 / ((d + 2) * (d + 4) * (d + 6))
        s = np.einsum("ij,ij->i", z, z)
        return np.where(s < 1.0, (1.0 - s) ** 3, 0.0) / norm

    def quadrature_moment_error(self):
        """|sum_k w_k |eps z_k|^2 - C_eps|."""
        return abs(float(self.weights @ np.einsum("ij,ij->i", self.offsets, self.offsets)) - self.C_eps)

    def refined(self):
        return MollifierFamily(self.eps, self.dim, 2 * self.order)

    def spread(self, atoms):
        """Array (n, K, d) of atom + offset, the support of the surrogate convolution."""
        return atoms[:, None, :] + self.offsets[None, :, :]


def _check_family(mu, fam):
    if mu.dim != fam.dim:
        raise ValidationError(f"measure has dimension {mu.dim}, mollifier family {fam.dim}")


def mollify(mu, fam):
    """Quadrature surrogate of mu * kappa_eps."""
    _check_family(mu, fam)
    atoms = fam.spread(mu.atoms).reshape(-1, mu.dim)
    weights = (mu.weights[:, None] * fam.weights[None, :]).ravel()
    return EmpiricalMeasure(atoms, weights)


def _uniform_nodes(dim, count, radius):
    if dim == 1:
        return (radius * (2.0 * np.arange(count) + 1.0 - count) / count)[:, None]
    # unscrambled Halton points of the cube, kept inside the ball
    sampler = qmc.Halton(d=dim, scramble=False)
    out = np.empty((0, dim))
    while out.shape[0] < count:
        pts = 2.0 * sampler.random(4 * count) - 1.0
        out = np.concatenate([out, pts[np.einsum("ij,ij->i", pts, pts) <= 1.0]])
    return radius * out[:count]


def hat_measure(nu, fam, n_uniform=None):
    """Mollify, restrict to the closed ball B(0, 1/eps), add the uniform part and renormalize.

    The uniform part is ``n_uniform`` quasi-uniform nodes of equal mass with
    total eps^(d+3) Leb(B(0, 1/eps)) = eps^3 omega_d.
    """
    _check_family(nu, fam)
    n_uniform = DEFAULT_UNIFORM.get(fam.dim, 64) if n_uniform is None else int(n_uniform)
    if n_uniform < 1:
        raise ValidationError(f"n_uniform must be positive, got {n_uniform}")
    smooth = mollify(nu, fam)
    R = fam.radius
    inside = np.linalg.norm(smooth.atoms, axis=1) <= R
    if not inside.any():
        raise ValidationError(f"all mass of the mollified measure lies outside B(0, {R:g})")
    extra = fam.eps**3 * unit_ball_volume(fam.dim)
    uniform = _uniform_nodes(fam.dim, n_uniform, R)
    atoms = np.concatenate([smooth.atoms[inside], uniform])
    weights = np.concatenate([smooth.weights[inside], np.full(n_uniform, extra / n_uniform)])
    return EmpiricalMeasure(atoms, weights)


def contraction_check(sigma, sigma2, fam, slack=QUADRATURE_SLACK):
    """(W2(sigma_eps, sigma2_eps), W2(sigma, sigma2)); raises when the first exceeds the second by ``slack``."""
    _check_family(sigma, fam)
    _check_family(sigma2, fam)
    lhs = w2_exact(mollify(sigma, fam), mollify(sigma2, fam))[0]
    rhs = w2_exact(sigma, sigma2)[0]
    if lhs > rhs + slack:
        raise CheckFailedError("contraction", f"W2 after mollification {lhs:.6g} > {rhs:.6g} + {slack:g}")
    return lhs, rhs


def f_nu_eps(mu, nu, fam, n_uniform=None, nu_hat=None):
    """F^eps_nu(mu) = W2^2(mollify(mu), hat(nu)) / 2."""
    if nu_hat is None:
        nu_hat = hat_measure(nu, fam, n_uniform)
    return 0.5 * w2_exact(mollify(mu, fam), nu_hat)[0] ** 2


# ---------------------------------------------------------------- dictionaries


@dataclass(frozen=True)
class DictionaryEntry:
    measure: EmpiricalMeasure
    smoothed: EmpiricalMeasure
    pair: object
    a: float

    def u(self, x):
        """u_h(x) = |x|^2/2 - phi*_h(x) + a_h."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 0.5 * np.einsum("ij,ij->i", x, x) - self.pair.phi_star(x) + self.a


@dataclass(frozen=True)
class PotentialDictionary:
    """Potentials between the hat measure of nu and the mollified dictionary measures."""

    nu_hat: EmpiricalMeasure
    family: MollifierFamily
    entries: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.entries)

    @property
    def eps(self):
        return self.family.eps

    def integrals(self, mu, k=None):
        """int u_h d mu_eps for h = 1..k."""
        k = len(self) if k is None else k
        smooth = mollify(mu, self.family)
        return np.array([smooth.weights @ e.u(smooth.atoms) for e in self.entries[:k]])

    def f_nu_eps(self, mu):
        return 0.5 * w2_exact(mollify(mu, self.family), self.nu_hat)[0] ** 2

    def index_of(self, mu):
        """Position of ``mu`` among the dictionary measures, or None."""
        for h, e in enumerate(self.entries):
            if e.measure == mu:
                return h
        return None

    def lipschitz_radius_check(self, probes, rtol=1e-12):
        """max over entries and probe rows of |phi*_h(x)| - |x|/eps (nonpositive when the bound holds)."""
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        r = np.linalg.norm(probes, axis=1)
        worst = max(float(np.max(np.abs(e.pair.phi_star(probes)) - r / self.eps)) for e in self.entries)
        if worst > rtol * (1.0 + r.max() / self.eps):
            raise CheckFailedError("phi_star_lipschitz", f"|phi*(x)| exceeds |x|/eps by {worst:.3e}")
        return worst


def _entry(nu_hat, fam, mu):
    smooth = mollify(mu, fam)
    pair = kantorovich_potentials(nu_hat, smooth, R=fam.radius)
    y = nu_hat.atoms
    a = float(nu_hat.weights @ (0.5 * np.einsum("ij,ij->i", y, y) - pair.phi_values))
    return DictionaryEntry(measure=mu, smoothed=smooth, pair=pair, a=a)


def build_dictionary(nu, fam, dict_measures, n_uniform=None, nu_hat=None):
    """Potential dictionary for F^eps_nu built from ``dict_measures`` (in order).

    ``nu_hat`` overrides the hat measure of ``nu``; it must lie in B(0, 1/eps).
    """
    dict_measures = list(dict_measures)
    if not dict_measures:
        raise ValidationError("dictionary needs at least one measure")
    if nu_hat is None:
        nu_hat = hat_measure(nu, fam, n_uniform)
    entries = tuple(_entry(nu_hat, fam, mu) for mu in dict_measures)
    return PotentialDictionary(nu_hat=nu_hat, family=fam, entries=entries)


def _check_k(dictionary, k):
    k = int(k)
    if not 1 <= k <= len(dictionary):
        raise ValidationError(f"k must lie in [1, {len(dictionary)}], got {k}")
    return k


def g_eps_k(dictionary, mu, k):
    """G_{eps,k}(mu) = max_{h <= k} int u_h d mu_eps."""
    k = _check_k(dictionary, k)
    return float(dictionary.integrals(mu, k).max())


def g_lipschitz_check(dictionary, mu, mu2, k, slack=SOLVER_SLACK):
    """(|G(mu) - G(mu2)|, (|mu|_2 + |mu2|_2 + 1/eps + C) W2(mu, mu2)) with C the root kernel moment."""
    k = _check_k(dictionary, k)
    lhs = abs(g_eps_k(dictionary, mu, k) - g_eps_k(dictionary, mu2, k))
    fam = dictionary.family
    const = math.sqrt(second_moment(mu)) + math.sqrt(second_moment(mu2)) + 1.0 / fam.eps + fam.C_eps_root
    rhs = const * w2_exact(mu, mu2)[0]
    if lhs > rhs + slack:
        raise CheckFailedError("g_lipschitz", f"|G(mu) - G(mu')| = {lhs:.6g} > {rhs:.6g} + {slack:g}")
    return lhs, rhs


def convolved_gradient(pair, fam, x):
    """sum_k w_k g(x + eps z_k), g the plan-following subgradient of phi*."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pts = fam.spread(x)
    grads = pair.transport_gradient(pts.reshape(-1, x.shape[1])).reshape(pts.shape)
    return np.einsum("k,nkd->nd", fam.weights, grads)


def gradient_bound_check(dictionary, mu, h, slack=QUADRATURE_SLACK):
    """(int |x - grad(phi*_h * kappa_eps)|^2 dmu, W2^2(mu_eps, nu_hat)).

    The right side is the transport cost of entry ``h`` when ``mu`` is its
    dictionary measure and 2 F^eps_nu(mu) otherwise; only the first case is
    a proven inequality.
    """
    if not 0 <= h < len(dictionary):
        raise ValidationError(f"entry index {h} outside [0, {len(dictionary)})")
    entry = dictionary.entries[h]
    fam = dictionary.family
    _check_family(mu, fam)
    g = convolved_gradient(entry.pair, fam, mu.atoms)
    diff = mu.atoms - g
    lhs = float(mu.weights @ np.einsum("ij,ij->i", diff, diff))
    rhs = entry.pair.cost**2 if entry.measure == mu else 2.0 * dictionary.f_nu_eps(mu)
    if lhs > rhs + slack:
        raise CheckFailedError("gradient_bound", f"{lhs:.6g} > {rhs:.6g} + {slack:g}")
    return lhs, rhs


def a_lower_bound_check(dictionary, h):
    """a_h + 1 + m2(mu^h_eps)/2 + |mu^h_eps|_2 / eps, nonnegative when the lower bound holds."""
    entry = dictionary.entries[h]
    m2 = second_moment(entry.smoothed)
    margin = entry.a + 1.0 + 0.5 * m2 + math.sqrt(m2) / dictionary.eps
    if not np.isfinite(entry.a) or margin < 0:
        raise CheckFailedError("a_lower_bound", f"a_{h} = {entry.a:.6g} below the bound by {-margin:.3e}")
    return margin


class DistanceApproximator(TransformerMixin, BaseEstimator):
    """Estimator view of a potential dictionary.

    ``fit(X)`` builds the dictionary from the measures in ``X``;
    ``transform(X)`` returns the matrix of int u_h d mu_eps (probes by
    entries) and :meth:`g_curve` the running maxima G_{eps,1..k}.

    Parameters
    ----------
    nu : EmpiricalMeasure
    eps : float
    order : int, optional
        Kernel quadrature order.
    n_uniform : int, optional
    """

    def __init__(self, nu=None, eps=0.5, order=None, n_uniform=None):
        self.nu = nu
        self.eps = eps
        self.order = order
        self.n_uniform = n_uniform

    def fit(self, X, y=None):
        if not isinstance(self.nu, EmpiricalMeasure):
            raise ValidationError("nu must be an EmpiricalMeasure")
        fam = MollifierFamily(self.eps, self.nu.dim, self.order)
        self.dictionary_ = build_dictionary(self.nu, fam, list(X), n_uniform=self.n_uniform)
        self.n_entries_ = len(self.dictionary_)
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        return np.array([self.dictionary_.integrals(mu) for mu in X])

    def g_curve(self, X):
        return np.maximum.accumulate(self.transform(X), axis=1)

    def target(self, X):
        """F^eps_nu at every measure of ``X``."""
        check_is_fitted(self, "dictionary_")
        return np.array([self.dictionary_.f_nu_eps(mu) for mu in X])


# ---------------------------------------------------------------- truncations


@dataclass(frozen=True)
class TruncationMap:
    """Nondecreasing Lipschitz zeta with closed-form derivative, C^1 with zeta' > 0 on ``interval``."""

    zeta: object
    derivative: object
    interval: tuple
    name: str = "truncation"

    def __call__(self, s):
        return self.zeta(np.asarray(s, dtype=float))

    def check(self, probes, step=1e-6, tol=1e-6):
        """Monotonicity on sorted probes and derivative vs central differences."""
        s = np.sort(np.asarray(probes, dtype=float).ravel())
        z = self(s)
        if np.any(np.diff(z) < -1e-15):
            i = int(np.argmax(np.diff(z) < -1e-15))
            raise CheckFailedError("truncation_monotone", f"{self.name} decreases between {s[i]:g} and {s[i + 1]:g}")
        lo, hi = self.interval
        inner = s[(s - step > lo) & (s + step < hi)]
        fd = (self(inner + step) - self(inner - step)) / (2 * step)
        err = np.abs(fd - self.derivative(inner))
        if err.size and err.max() > tol:
            raise CheckFailedError("truncation_derivative", f"{self.name}: derivative off by {err.max():.3e}")
        return float(err.max()) if err.size else 0.0


def arctan_truncation():
    """zeta(s) = arctan(s^2/2) for s > 0 and 0 otherwise."""

    def zeta(s):
        return np.where(s > 0, np.arctan(0.5 * np.square(s)), 0.0)

    def derivative(s):
        return np.where(s > 0, s / (1.0 + 0.25 * s**4), 0.0)

    return TruncationMap(zeta, derivative, (0.0, np.inf), name="arctan")


def identity_truncation(lo=-np.inf, hi=np.inf):
    return TruncationMap(lambda s: np.asarray(s, dtype=float), np.ones_like, (lo, hi), name="identity")


def truncation_compose(zeta, F_values, G_values):
    """(zeta(F), zeta'(F) G)."""
    F = check_finite_values(np.asarray(F_values, dtype=float), "F_values")
    G = check_finite_values(np.asarray(G_values, dtype=float), "G_values")
    if F.shape != G.shape:
        raise ValidationError(f"value arrays differ in shape: {F.shape} and {G.shape}")
    return zeta(F), zeta.derivative(F) * G


# ---------------------------------------------------------------- quadrature refinement


def quadrature_refinement_report(mu, nu, eps, orders=(1, 2, 4, 8), n_uniform=None):
    """F^eps_nu(mu) under successively doubled kernel quadratures.

    Rows are (order, value, change, ratio) where ``ratio`` is the change
    over the previous change (NaN when undefined).
    """
    rows = []
    prev = prev_change = None
    for order in orders:
        fam = MollifierFamily(eps, mu.dim, order)
        value = f_nu_eps(mu, nu, fam, n_uniform)
        change = float("nan") if prev is None else abs(value - prev)
        ratio = change / prev_change if prev_change not in (None, 0.0) and prev is not None else float("nan")
        rows.append((order, value, change, ratio))
        prev, prev_change = value, (None if np.isnan(change) else change)
    return rows
