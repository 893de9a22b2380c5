"""Exact quadratic optimal transport between empirical measures.

The exact solver is the network simplex shipped with POT; everything the
rest of the package relies on (normalized convex potentials, conjugacy
certificates, closed forms) is computed here on top of its plan and duals.
"""

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

from ._validation import CheckFailedError, SolverError, ValidationError, check_finite_values
from .geometry import EmpiricalMeasure, second_moment

# numpy is the only backend used; skip probing for the heavy ML frameworks
for _key in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")
import ot  # noqa: E402

logger = logging.getLogger(__name__)

__all__ = [
    "TransportPlan",
    "PotentialPair",
    "GaussianMeasure",
    "MAX_ENTRIES",
    "cost_matrix",
    "w2_exact",
    "w2_1d",
    "kantorovich_potentials",
    "duality_gap",
    "gaussian_w2",
    "lipschitz_pairing_bound_check",
    "convex_estimate_check",
    "unit_ball_volume",
]

MAX_ENTRIES = 4_000_000
MAX_ITER = 10_000_000


def unit_ball_volume(d):
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def cost_matrix(x, y):
    """Squared Euclidean distances between the rows of ``x`` and ``y``."""
    if x.shape[0] * y.shape[0] * x.shape[1] <= 4 * MAX_ENTRIES:
        diff2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
    else:
        # expanded form for large instances; loses some accuracy for nearby points
        diff2 = (
            np.einsum("ij,ij->i", x, x)[:, None]
            + np.einsum("ij,ij->i", y, y)[None, :]
            - 2.0 * x @ y.T
        )
    return np.maximum(diff2, 0.0)


@dataclass(frozen=True)
class TransportPlan:
    """A coupling between ``source`` and ``target`` with its cost matrix."""

    matrix: np.ndarray
    source: EmpiricalMeasure
    target: EmpiricalMeasure
    costs: np.ndarray = field(repr=False)
    source_dual: np.ndarray = field(repr=False, default=None)
    target_dual: np.ndarray = field(repr=False, default=None)

    def marginal_error(self):
        rows = np.abs(self.matrix.sum(axis=1) - self.source.weights).max()
        cols = np.abs(self.matrix.sum(axis=0) - self.target.weights).max()
        return float(max(rows, cols))

    def total_cost(self):
        """Integral of |x - y|^2 against the plan."""
        return float(np.sum(self.matrix * self.costs))

    def entries(self, atol=0.0):
        """Rows ``(i, j, mass, cost_ij)`` for the plan entries above ``atol``, row-major."""
        i, j = np.nonzero(self.matrix > atol)
        return [(int(a), int(b), float(self.matrix[a, b]), float(self.costs[a, b])) for a, b in zip(i, j)]

    def barycentric_target(self):
        """For each source atom, the plan-weighted mean of the target atoms it is sent to."""
        rows = self.matrix.sum(axis=1, keepdims=True)
        return (self.matrix @ self.target.atoms) / np.where(rows > 0, rows, 1.0)


def _check_same_dim(mu, nu):
    if mu.dim != nu.dim:
        raise ValidationError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _solve(a, b, costs, num_iter_max):
    plan, log = ot.emd(a, b, costs, numItermax=num_iter_max, log=True)
    if log.get("result_code", 1) != 1:
        plan = np.maximum(plan, 0.0)
        bound = float(np.sqrt(max(np.sum(plan * costs), 0.0)))
        raise SolverError(
            f"network simplex stopped before optimality ({log.get('warning')}); best feasible cost {bound:.12g}",
            best_bound=bound,
        )
    return np.maximum(plan, 0.0), log["u"], log["v"]


def w2_exact(mu, nu, max_entries=MAX_ENTRIES, num_iter_max=MAX_ITER):
    """Exact 2-Wasserstein distance and an optimal plan.

    Returns ``(cost, plan)`` where ``cost`` is W_2(mu, nu) itself (not
    squared).  Instances with more than ``max_entries`` cost entries are
    refused rather than approximated.
    """
    _check_same_dim(mu, nu)
    n, m = mu.size, nu.size
    if n * m > max_entries:
        raise ValidationError(f"instance has {n * m} cost entries, above the limit {max_entries}")
    costs = cost_matrix(mu.atoms, nu.atoms)
    if n == 1:
        # the product coupling is the only one
        matrix, u, v = np.outer(mu.weights, nu.weights), np.zeros(1), costs[0].copy()
    elif m == 1:
        matrix, u, v = np.outer(mu.weights, nu.weights), costs[:, 0].copy(), np.zeros(1)
    else:
        matrix, u, v = _solve(np.array(mu.weights), np.array(nu.weights), costs, num_iter_max)
    plan = TransportPlan(matrix, mu, nu, costs, u, v)
    return math.sqrt(max(plan.total_cost(), 0.0)), plan


def w2_1d(mu, nu):
    """W_2 on the line through the monotone (quantile) coupling."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValidationError("w2_1d needs one-dimensional measures")
    ix, iy = np.argsort(mu.atoms[:, 0], kind="stable"), np.argsort(nu.atoms[:, 0], kind="stable")
    x, a = mu.atoms[ix, 0], mu.weights[ix]
    y, b = nu.atoms[iy, 0], nu.weights[iy]
    ca, cb = np.cumsum(a), np.cumsum(b)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    lower = np.concatenate(([0.0], levels[:-1]))
    mids = 0.5 * (lower + levels)
    qx = x[np.minimum(np.searchsorted(ca, mids), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cb, mids), y.size - 1)]
    return math.sqrt(float(np.sum((levels - lower) * (qx - qy) ** 2)))


@dataclass(frozen=True)
class PotentialPair:
    """Normalized convex potentials for the transport from ``source`` to ``target``.

    ``phi_values`` live on the source atoms (the grid inside B(0, radius));
    the conjugate ``phi_star(y) = max_i <x_i, y> - phi_i`` is defined on all of
    R^d, is ``radius``-Lipschitz and vanishes at the origin.
    ``anchor_constant`` is the shift that was added to the raw LP potential
    to reach that normalization.
    """

    grid: np.ndarray
    phi_values: np.ndarray
    radius: float
    anchor_constant: float
    source: EmpiricalMeasure
    target: EmpiricalMeasure
    plan: TransportPlan = field(repr=False)
    cost: float = 0.0

    def phi_star(self, points):
        """Evaluate the conjugate potential at the rows of ``points``."""
        y = np.atleast_2d(np.asarray(points, dtype=float))
        return np.max(y @ self.grid.T - self.phi_values[None, :], axis=1)

    def argmax_index(self, points, rtol=1e-12):
        """Index of the active affine piece, lowest index among (near) ties."""
        y = np.atleast_2d(np.asarray(points, dtype=float))
        scores = y @ self.grid.T - self.phi_values[None, :]
        best = scores.max(axis=1, keepdims=True)
        tied = scores >= best - rtol * (1.0 + np.abs(best))
        return np.argmax(tied, axis=1)

    def argmax_map(self, points):
        """The a.e. gradient of ``phi_star``: slope of the active piece."""
        return self.grid[self.argmax_index(points)]

    def transport_gradient(self, points):
        """A subgradient of ``phi_star`` chosen to follow the optimal plan.

        At points that are atoms of ``target`` the plan-weighted mean of the
        source atoms they receive mass from is returned; it lies in the
        convex hull of the active slopes, hence in the subdifferential.
        Elsewhere this is :meth:`argmax_map`.
        """
        y = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.argmax_map(y)
        lookup = {tuple(row): j for j, row in enumerate(self.target.atoms.tolist())}
        pt = self.plan.matrix.T
        cols = pt.sum(axis=1, keepdims=True)
        bary = (pt @ self.grid) / np.where(cols > 0, cols, 1.0)
        for k, row in enumerate(y.tolist()):
            j = lookup.get(tuple(row))
            if j is not None:
                out[k] = bary[j]
        return out

    def phi_extension(self, points):
        """Convex extension of ``phi`` to the ball: sup over y in {0} and the target atoms."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        ys = self.target.atoms
        vals = x @ ys.T - self.phi_star(ys)[None, :]
        return np.maximum(vals.max(axis=1), 0.0)

    def dual_values(self):
        """Admissible pair (u on source atoms, v on target atoms) for the |x-y|^2 cost."""
        x, y = self.grid, self.target.atoms
        u = np.einsum("ij,ij->i", x, x) - 2.0 * self.phi_values
        v = np.einsum("ij,ij->i", y, y) - 2.0 * self.phi_star(y)
        return u, v

    def conjugacy_residual(self):
        """max_i |phi_i - max_j (<x_i, y_j> - phi*(y_j))| over the recorded grid.

        The finite maximum is a lower bound of the sup over all y, which in
        turn never exceeds phi_i, so a zero residual certifies the
        biconjugate identity on the grid.
        """
        vals = self.grid @ self.target.atoms.T - self.phi_star(self.target.atoms)[None, :]
        return float(np.max(np.abs(vals.max(axis=1) - self.phi_values)))

    def potential_identity_residual(self):
        """|int phi dsource + int phi* dtarget - (m2/2 + m2/2 - W^2/2)|."""
        lhs = self.source.weights @ self.phi_values + self.target.weights @ self.phi_star(self.target.atoms)
        rhs = 0.5 * second_moment(self.source) + 0.5 * second_moment(self.target) - 0.5 * self.cost**2
        return float(abs(lhs - rhs))


def kantorovich_potentials(nu, mu, R=None, rtol=1e-12):
    """Normalized potential pair for the transport from ``nu`` (inside B(0, R)) to ``mu``.

    The LP duals (f, g) of the |x - y|^2 problem give phi = |x|^2/2 - f/2 on
    the atoms of ``nu``; phi is then replaced by its double conjugate over
    the atoms of ``mu`` and shifted so that min phi = phi*(0) = 0.
    """
    _check_same_dim(nu, mu)
    radii = np.linalg.norm(nu.atoms, axis=1)
    if R is None:
        R = float(radii.max())
    R = float(R)
    worst = int(np.argmax(radii))
    if radii[worst] > R * (1.0 + rtol) + rtol:
        raise ValidationError(f"support violation: atom {worst} of nu has norm {radii[worst]:.6g} > R = {R:.6g}")
    cost, plan = w2_exact(nu, mu)
    f = plan.source_dual
    feasible = f[:, None] + plan.target_dual[None, :] - plan.costs
    if feasible.max() > 1e-7 * (1.0 + plan.costs.max()):
        i, j = np.unravel_index(np.argmax(feasible), feasible.shape)
        raise SolverError(f"infeasible dual at pair ({i}, {j}): excess {feasible[i, j]:.3e}")
    x, y = nu.atoms, mu.atoms
    phi = 0.5 * np.einsum("ij,ij->i", x, x) - 0.5 * f
    phi_star_y = np.max(y @ x.T - phi[None, :], axis=1)
    phi = np.max(x @ y.T - phi_star_y[None, :], axis=1)
    shift = -float(phi.min())
    phi = phi + shift
    return PotentialPair(
        grid=np.array(x),
        phi_values=phi,
        radius=R,
        anchor_constant=shift,
        source=nu,
        target=mu,
        plan=plan,
        cost=cost,
    )


def duality_gap(mu, nu, u, v, atol=1e-9):
    """W_2^2(mu, nu) minus the dual objective of an admissible (u, v).

    Raises :class:`ValidationError` naming the worst atom pair when
    u(x) + v(y) exceeds |x - y|^2 by more than ``atol`` (relative to 1 + cost).
    """
    u = check_finite_values(np.asarray(u, dtype=float).ravel(), "u")
    v = check_finite_values(np.asarray(v, dtype=float).ravel(), "v")
    if u.size != mu.size or v.size != nu.size:
        raise ValidationError(f"potentials have sizes {u.size}, {v.size}; expected {mu.size}, {nu.size}")
    cost, plan = w2_exact(mu, nu)
    excess = u[:, None] + v[None, :] - plan.costs
    slack = atol * (1.0 + plan.costs)
    viol = excess - slack
    if viol.max() > 0:
        i, j = np.unravel_index(np.argmax(viol), viol.shape)
        raise ValidationError(
            f"admissibility violated at pair ({i}, {j}): u+v exceeds |x-y|^2 by {excess[i, j]:.3e}"
        )
    return float(cost**2 - (mu.weights @ u + nu.weights @ v))


@dataclass(frozen=True)
class GaussianMeasure:
    """N(mean, cov); the covariance is symmetrized and tiny negative eigenvalues clamped."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValidationError(f"mean of length {d} needs a {d}x{d} covariance, got {cov.shape}")
        check_finite_values(mean, "mean")
        check_finite_values(cov, "cov")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValidationError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-12 * scale:
            raise ValidationError(f"covariance has negative eigenvalue {evals.min():.3e}")
        evals = np.maximum(evals, 0.0)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (evecs * evals) @ evecs.T)
        object.__setattr__(self, "_root", (evecs * np.sqrt(evals)) @ evecs.T)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def sqrt_cov(self):
        return self._root

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._root

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"mean", "cov"}
        if unknown:
            raise ValidationError(f"unknown Gaussian keys: {sorted(unknown)}")
        return cls(data["mean"], data["cov"])


def _psd_sqrt(a):
    evals, evecs = np.linalg.eigh(0.5 * (a + a.T))
    return (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T


def gaussian_w2(g1, g2):
    """Closed-form W_2 between Gaussians (Bures metric plus mean shift)."""
    if g1.dim != g2.dim:
        raise ValidationError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    r1 = g1.sqrt_cov
    cross = _psd_sqrt(r1 @ g2.cov @ r1)
    dm = g1.mean - g2.mean
    w2sq = float(dm @ dm + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return math.sqrt(max(w2sq, 0.0))


def lipschitz_pairing_bound_check(f, L, mu, nu, atol=1e-9):
    """Check int f d(mu - nu) <= L W_2(mu, nu) for an L-Lipschitz ``f``.

    ``f`` is vectorized over an (n, d) array.  The Lipschitz bound is first
    verified on all pairs of atoms of both measures.
    """
    _check_same_dim(mu, nu)
    pts = np.vstack([mu.atoms, nu.atoms])
    vals = check_finite_values(np.broadcast_to(f(pts), (pts.shape[0],)), "f")
    dist = np.sqrt(cost_matrix(pts, pts))
    excess = np.abs(vals[:, None] - vals[None, :]) - L * dist
    if excess.max() > atol * (1.0 + np.abs(vals).max()):
        i, j = np.unravel_index(np.argmax(excess), excess.shape)
        raise ValidationError(f"f is not {L}-Lipschitz on atoms {i}, {j} (excess {excess[i, j]:.3e})")
    lhs = float(mu.weights @ vals[: mu.size] - nu.weights @ vals[mu.size :])
    rhs = float(L * w2_exact(mu, nu)[0])
    if lhs > rhs + atol:
        raise CheckFailedError("lipschitz_pairing", f"{lhs:.12g} > {rhs:.12g}")
    return lhs, rhs


def _ball_grid(R, d, n_per_axis):
    h = 2.0 * R / n_per_axis
    axis = -R + h * (np.arange(n_per_axis) + 0.5)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return mesh[np.linalg.norm(mesh, axis=1) < R], h**d


def convex_estimate_check(pair, r, n_per_axis=400):
    """Interior sup bound for the convex potential on B(0, R).

    Integrates the convex extension of ``phi`` over B(0, R) by the midpoint
    rule (I) and returns ``(sup_{|x|<=r} phi, I / (omega_d (R - r)^d))``.
    """
    R, d = pair.radius, pair.grid.shape[1]
    if not 0 < r < R:
        raise ValidationError(f"need 0 < r < R = {R}, got r = {r}")
    if d > 3:
        raise ValidationError("convex_estimate_check supports d <= 3")
    n_axis = n_per_axis if d == 1 else max(32, int(round(n_per_axis ** (2.0 / d))))
    pts, cell = _ball_grid(R, d, n_axis)
    vals = pair.phi_extension(pts)
    integral = float(vals.sum() * cell)
    inner = np.linalg.norm(pts, axis=1) <= r
    sup = float(pair.phi_extension(np.vstack([pts[inner], pair.grid[np.linalg.norm(pair.grid, axis=1) <= r]])).max())
    return sup, integral / (unit_ball_volume(d) * (R - r) ** d)
