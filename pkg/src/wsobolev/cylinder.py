"""Cylinder functions F(mu) = psi(<phi_1, mu>, ..., <phi_N, mu>) and their Wasserstein differential."""

import numpy as np

from ._validation import CheckFailedError, ValidationError, check_finite_values, check_points
from .geometry import EmpiricalMeasure, VectorField, pushforward
from .transport import w2_exact

__all__ = [
    "SmoothFeature",
    "OuterFunction",
    "CylinderFunction",
    "gaussian_bump",
    "coord_bump",
    "monomial",
    "coordinate",
    "feature_from_config",
    "outer_from_config",
    "cylinder_from_config",
    "linear_outer",
    "square_outer",
    "polynomial_outer",
    "tanh_outer",
    "product_outer",
    "constant_outer",
    "linear_functional",
    "constant_function",
    "evaluate",
    "differential",
    "grad_norm",
    "directional_derivative",
    "representation_invariance_check",
    "lip_lower_estimate",
    "segment_upper_bound",
    "algebra_combine",
    "random_probe_points",
]

FD_STEP = 1e-4
N_PROBES = 32


class SmoothFeature:
    """A C^1 function on R^d with its gradient, both vectorized over (n, d) arrays."""

    def __init__(self, value, gradient, name="feature", bound_hint=None, polynomial=False, dim=None):
        self._value = value
        self.dim = dim
        self._gradient = gradient
        self.name = name
        self.bound_hint = bound_hint
        # unbounded on R^d: only meaningful on compactly supported measures
        self.polynomial = polynomial

    def __call__(self, x):
        return self.value(x)

    def __repr__(self):
        return f"SmoothFeature({self.name})"

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(self._value(x), dtype=float), (x.shape[0],))

    def gradient(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(self._gradient(x), dtype=float), x.shape)

    def check_gradient(self, probes, step=FD_STEP, rtol=1e-5, atol=1e-8):
        """Largest central-difference mismatch on ``probes``, relative to gradient size."""
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        g = self.gradient(probes)
        worst = 0.0
        for k in range(probes.shape[1]):
            e = np.zeros(probes.shape[1])
            e[k] = step
            fd = (self.value(probes + e) - self.value(probes - e)) / (2 * step)
            err = np.abs(fd - g[:, k]) / (atol / rtol + np.abs(g[:, k]))
            worst = max(worst, float(err.max()))
        return worst * rtol


def gaussian_bump(center, width=1.0):
    """exp(-|x - center|^2 / width^2)."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    s2 = float(width) ** 2

    def value(x):
        return np.exp(-np.sum((x - c) ** 2, axis=1) / s2)

    def gradient(x):
        return (-2.0 / s2) * (x - c) * value(x)[:, None]

    return SmoothFeature(
        value,
        gradient,
        name=f"gaussian_bump({c.tolist()}, {width})",
        bound_hint=(1.0, np.sqrt(2.0 / s2)),
        dim=c.size,
    )


def coord_bump(center, width=1.0, coord=0):
    """(x_k - c_k) exp(-|x - c|^2 / width^2)."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    s2 = float(width) ** 2
    k = int(coord)
    if not 0 <= k < c.size:
        raise ValidationError(f"coord {k} out of range for dimension {c.size}")

    def value(x):
        return (x[:, k] - c[k]) * np.exp(-np.sum((x - c) ** 2, axis=1) / s2)

    def gradient(x):
        bump = np.exp(-np.sum((x - c) ** 2, axis=1) / s2)
        g = (-2.0 / s2) * (x - c) * ((x[:, k] - c[k]) * bump)[:, None]
        g[:, k] += bump
        return g

    return SmoothFeature(value, gradient, name=f"coord_bump({c.tolist()}, {width}, {k})", dim=c.size)


def monomial(exponents, coef=1.0):
    """coef * prod_i x_i^{e_i}; unbounded, so flagged as polynomial."""
    e = np.asarray(exponents, dtype=int).ravel()
    if (e < 0).any():
        raise ValidationError("monomial exponents must be nonnegative")
    coef = float(coef)

    def value(x):
        return coef * np.prod(x ** e, axis=1)

    def gradient(x):
        g = np.zeros_like(x)
        for i in np.flatnonzero(e):
            lowered = e.copy()
            lowered[i] -= 1
            g[:, i] = coef * e[i] * np.prod(x**lowered, axis=1)
        return g

    return SmoothFeature(value, gradient, name=f"monomial({e.tolist()})", polynomial=True, dim=e.size)


def coordinate(k, dim):
    e = np.zeros(dim, dtype=int)
    e[k] = 1
    return monomial(e)


def feature_from_config(cfg, dim=None):
    """Build a feature from ``{"type": "gaussian_bump" | "poly" | "coord_bump", ...}``."""
    cfg = dict(cfg)
    kind = cfg.pop("type", None)
    allowed = {
        "gaussian_bump": {"center", "width"},
        "coord_bump": {"center", "width", "coord"},
        "poly": {"exponents", "coef"},
    }
    if kind not in allowed:
        raise ValidationError(f"unknown feature type {kind!r}")
    unknown = set(cfg) - allowed[kind]
    if unknown:
        raise ValidationError(f"unknown keys for {kind}: {sorted(unknown)}")
    if kind == "gaussian_bump":
        return gaussian_bump(cfg.get("center", np.zeros(dim or 1)), cfg.get("width", 1.0))
    if kind == "coord_bump":
        return coord_bump(cfg.get("center", np.zeros(dim or 1)), cfg.get("width", 1.0), cfg.get("coord", 0))
    return monomial(cfg["exponents"], cfg.get("coef", 1.0))


class OuterFunction:
    """psi: R^N -> R with its gradient."""

    def __init__(self, value, partials, n_args, name="outer"):
        self._value = value
        self._partials = partials
        self.n_args = int(n_args)
        self.name = name

    def __repr__(self):
        return f"OuterFunction({self.name}, N={self.n_args})"

    def __call__(self, s):
        return self.value(s)

    def value(self, s):
        return float(self._value(np.asarray(s, dtype=float)))

    def partials(self, s):
        return np.asarray(self._partials(np.asarray(s, dtype=float)), dtype=float).reshape(self.n_args)

    def check_partials(self, probes, step=FD_STEP, rtol=1e-5, atol=1e-8):
        worst = 0.0
        for s in np.atleast_2d(probes):
            g = self.partials(s)
            for k in range(self.n_args):
                e = np.zeros(self.n_args)
                e[k] = step
                fd = (self.value(s + e) - self.value(s - e)) / (2 * step)
                worst = max(worst, abs(fd - g[k]) / (atol / rtol + abs(g[k])))
        return worst * rtol


def linear_outer(coeffs, intercept=0.0):
    a = np.atleast_1d(np.asarray(coeffs, dtype=float))
    b = float(intercept)
    return OuterFunction(lambda s: b + a @ s, lambda s: a, a.size, name="linear")


def square_outer(weights=None, n_args=1):
    """sum_n a_n s_n^2 (plain s^2 by default)."""
    a = np.ones(n_args) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
    return OuterFunction(lambda s: a @ (s * s), lambda s: 2.0 * a * s, a.size, name="square")


def polynomial_outer(terms, n_args):
    """Sum of ``coef * prod s_n^{e_n}`` over ``terms = [(coef, exponents), ...]``."""
    coefs = np.array([float(c) for c, _ in terms])
    exps = np.array([np.asarray(e, dtype=int).reshape(n_args) for _, e in terms])
    if (exps < 0).any():
        raise ValidationError("polynomial exponents must be nonnegative")

    def value(s):
        return coefs @ np.prod(s[None, :] ** exps, axis=1)

    def partials(s):
        g = np.zeros(n_args)
        for c, e in zip(coefs, exps):
            for i in np.flatnonzero(e):
                lowered = e.copy()
                lowered[i] -= 1
                g[i] += c * e[i] * np.prod(s**lowered)
        return g

    return OuterFunction(value, partials, n_args, name="polynomial")


def tanh_outer(coeffs, intercept=0.0):
    """tanh(b + a . s)."""
    a = np.atleast_1d(np.asarray(coeffs, dtype=float))
    b = float(intercept)
    return OuterFunction(
        lambda s: np.tanh(b + a @ s),
        lambda s: a * (1.0 - np.tanh(b + a @ s) ** 2),
        a.size,
        name="tanh",
    )


def product_outer(n_args=2):
    def partials(s):
        return np.array([np.prod(np.delete(s, i)) for i in range(n_args)])

    return OuterFunction(lambda s: np.prod(s), partials, n_args, name="product")


def constant_outer(c, n_args=1):
    c = float(c)
    return OuterFunction(lambda s: c, lambda s: np.zeros(n_args), n_args, name=f"constant({c})")


def outer_from_config(cfg, n_args):
    cfg = dict(cfg)
    kind = cfg.pop("type", None)
    if kind == "linear":
        return linear_outer(cfg.get("coeffs", np.ones(n_args)), cfg.get("intercept", 0.0))
    if kind == "square":
        return square_outer(cfg.get("weights"), n_args)
    if kind == "polynomial":
        return polynomial_outer([(t["coef"], t["exponents"]) for t in cfg["terms"]], n_args)
    if kind == "tanh":
        return tanh_outer(cfg.get("coeffs", np.ones(n_args)), cfg.get("intercept", 0.0))
    raise ValidationError(f"unknown outer function type {kind!r}")


class CylinderFunction:
    """F = psi o (<phi_1, .>, ..., <phi_N, .>).

    Supports ``+``, ``-``, scalar ``*`` and products with other cylinder
    functions; features are concatenated and the outer functions combined,
    so the result is again a cylinder function.
    """

    def __init__(self, outer, features):
        features = list(features)
        if not features:
            raise ValidationError("a cylinder function needs at least one feature")
        if outer.n_args != len(features):
            raise ValidationError(f"outer function takes {outer.n_args} arguments, got {len(features)} features")
        self.outer = outer
        self.features = features

    def __repr__(self):
        return f"CylinderFunction({self.outer.name}, N={len(self.features)})"

    @property
    def n_features(self):
        return len(self.features)

    def feature_means(self, mu):
        s = np.array([mu.weights @ f.value(mu.atoms) for f in self.features])
        bad = np.flatnonzero(~np.isfinite(s))
        if bad.size:
            raise ValidationError(f"feature {bad[0]} is not finite on the measure")
        return s

    def __call__(self, mu):
        return self.outer.value(self.feature_means(mu))

    def differential(self, mu, x):
        """Sum_n d_n psi(L(mu)) grad phi_n(x) at the rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dpsi = self.outer.partials(self.feature_means(mu))
        out = np.zeros_like(x)
        for coef, f in zip(dpsi, self.features):
            if coef != 0.0:
                out += coef * f.gradient(x)
        return out

    def __add__(self, other):
        if np.isscalar(other):
            return _affine(self, 1.0, float(other))
        return _binary(self, other, lambda a, b: a + b, lambda a, b, ga, gb: (ga, gb), "add")

    __radd__ = __add__

    def __neg__(self):
        return _affine(self, -1.0, 0.0)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if np.isscalar(other):
            return _affine(self, float(other), 0.0)
        return _binary(self, other, lambda a, b: a * b, lambda a, b, ga, gb: (b * ga, a * gb), "multiply")

    __rmul__ = __mul__

    def compose(self, eta, eta_prime, name="compose"):
        """eta o F for a differentiable scalar map ``eta`` with derivative ``eta_prime``."""
        outer = self.outer
        return CylinderFunction(
            OuterFunction(
                lambda s: eta(outer.value(s)),
                lambda s: eta_prime(outer.value(s)) * outer.partials(s),
                outer.n_args,
                name=f"{name}({outer.name})",
            ),
            self.features,
        )


def _affine(F, scale, shift):
    outer = F.outer
    return CylinderFunction(
        OuterFunction(
            lambda s: scale * outer.value(s) + shift,
            lambda s: scale * outer.partials(s),
            outer.n_args,
            name=f"{scale:g}*{outer.name}+{shift:g}",
        ),
        F.features,
    )


def _binary(F, G, combine, combine_grad, name):
    n = F.outer.n_args
    fo, go = F.outer, G.outer

    def value(s):
        return combine(fo.value(s[:n]), go.value(s[n:]))

    def partials(s):
        ga, gb = combine_grad(fo.value(s[:n]), go.value(s[n:]), fo.partials(s[:n]), go.partials(s[n:]))
        return np.concatenate([ga, gb])

    outer = OuterFunction(value, partials, n + go.n_args, name=f"{name}({fo.name}, {go.name})")
    return CylinderFunction(outer, F.features + G.features)


def linear_functional(feature):
    """mu -> <feature, mu>."""
    return CylinderFunction(linear_outer([1.0]), [feature])


def constant_function(c, dim=1):
    return CylinderFunction(constant_outer(c), [gaussian_bump(np.zeros(dim))])


def cylinder_from_config(cfg, dim=None):
    """``{"outer": {...}, "features": [{...}, ...]}``."""
    unknown = set(cfg) - {"outer", "features"}
    if unknown:
        raise ValidationError(f"unknown cylinder keys: {sorted(unknown)}")
    feats = [feature_from_config(f, dim) for f in cfg["features"]]
    return CylinderFunction(outer_from_config(cfg.get("outer", {"type": "linear"}), len(feats)), feats)


def algebra_combine(op, *args):
    """Functional form of the cylinder algebra: ``add``, ``scale``, ``multiply``, ``compose``.

    ``scale`` takes ``(F, c)``; ``compose`` takes ``(F, eta, eta_prime)``.
    """
    if op == "add":
        F, G = args
        _check_compatible(F, G)
        return F + G
    if op == "multiply":
        F, G = args
        _check_compatible(F, G)
        return F * G
    if op == "scale":
        F, c = args
        return F * float(c)
    if op == "compose":
        F, eta, eta_prime = args
        return F.compose(eta, eta_prime)
    raise ValidationError(f"unknown algebra operation {op!r}")


def _check_compatible(F, G):
    dims = {f.dim for f in F.features + G.features if f.dim is not None}
    if len(dims) > 1:
        raise ValidationError(f"features live in different dimensions: {sorted(dims)}")


# ---------------------------------------------------------------- operations


def evaluate(F, mu):
    return F(mu)


def differential(F, mu, x):
    """The Wasserstein differential DF(mu, x); a (d,) vector for a single point."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and not (x.ndim == 1 and mu.dim == 1 and x.size > 1)
    out = F.differential(mu, x.reshape(-1, mu.dim))
    return out[0] if single else out


def grad_norm(F, mu):
    """||DF[mu]|| in L^2(mu; R^d)."""
    g = F.differential(mu, mu.atoms)
    return float(np.sqrt(mu.weights @ np.einsum("ij,ij->i", g, g)))


def _field_values(mu, u):
    if isinstance(u, VectorField):
        if u.measure != mu:
            raise ValidationError("vector field is defined on a different measure")
        return u.values
    if callable(u):
        u = u(np.array(mu.atoms))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and mu.dim == 1:
        u = u.reshape(-1, 1)
    if u.shape != mu.atoms.shape:
        raise ValidationError(f"vector field of shape {u.shape} does not match atoms {mu.atoms.shape}")
    return check_finite_values(u, "vector field")


def directional_derivative(F, mu, u):
    """int <DF(mu, x), u(x)> dmu(x)."""
    u = _field_values(mu, u)
    g = F.differential(mu, mu.atoms)
    return float(mu.weights @ np.einsum("ij,ij->i", g, u))


def _probe_measures(mu, count=4):
    rng = np.random.default_rng(12345)
    probes = [mu]
    for _ in range(count):
        probes.append(EmpiricalMeasure(mu.atoms + 0.3 * rng.standard_normal(mu.atoms.shape), rng.random(mu.size) + 0.1))
    return probes


def representation_invariance_check(F, F2, mu, tol=1e-8, agree_tol=1e-10):
    """|grad_norm(F, mu) - grad_norm(F2, mu)| for two representations of one function.

    The representations must agree on a few probe measures around ``mu``.
    """
    for i, probe in enumerate(_probe_measures(mu)):
        a, b = F(probe), F2(probe)
        if abs(a - b) > agree_tol * (1.0 + abs(a)):
            raise ValidationError(f"representations disagree on probe {i}: {a!r} vs {b!r}")
    diff = abs(grad_norm(F, mu) - grad_norm(F2, mu))
    if diff > tol:
        raise CheckFailedError("representation_invariance", f"gradient norms differ by {diff:.3e}")
    return diff


def lip_lower_estimate(F, mu, eps):
    """|F((i + eps T)# mu) - F(mu)| / W_2((i + eps T)# mu, mu) with T = DF[mu]."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    T = F.differential(mu, mu.atoms)
    if not np.any(T):
        return 0.0
    moved = pushforward(mu, lambda x: x + eps * F.differential(mu, x))
    dist = w2_exact(moved, mu)[0]
    if dist == 0.0:
        return 0.0
    return abs(F(moved) - F(mu)) / dist


def segment_upper_bound(F, mu0, mu1, n_grid=10):
    """``(|F(mu1) - F(mu0)|, max_s grad_norm(F, mu_s) * W_2(mu0, mu1))``.

    ``mu_s`` is the displacement interpolation along an optimal plan,
    sampled at ``n_grid`` equispaced times in [0, 1].
    """
    dist, plan = w2_exact(mu0, mu1)
    i, j = np.nonzero(plan.matrix > 0)
    mass = plan.matrix[i, j]
    x, y = mu0.atoms[i], mu1.atoms[j]
    peak = 0.0
    for s in np.linspace(0.0, 1.0, n_grid):
        peak = max(peak, grad_norm(F, EmpiricalMeasure((1 - s) * x + s * y, mass)))
    return abs(F(mu1) - F(mu0)), peak * dist


def random_probe_points(dim, count=N_PROBES, scale=1.5, seed=0):
    return check_points(np.random.default_rng(seed).uniform(-scale, scale, size=(count, dim)))
