"""Hopf-Lax regularization on finite metric spaces.

For f on a finite space and exponent q > 1,

    Q_t f(x) = min_y d(x, y)^q / (q t^(q-1)) + f(y),

and ``d_plus[x]`` is the largest distance to a minimizer.  The minimizer
set is taken with a relative tolerance of 1e-12 on the objective.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import CheckFailedError, ValidationError, check_finite_values, check_positive

__all__ = [
    "FiniteMetricSpace",
    "HopfLaxResult",
    "hopf_lax",
    "lipschitz_constant",
    "check_slope_bound",
    "verify_identity_25",
    "truncate_distance",
]

TIE_RTOL = 1e-12
TRIANGLE_CHECK_MAX = 200


class FiniteMetricSpace:
    """Labelled points with a symmetric distance matrix.

    The triangle inequality is verified (tolerance 1e-12) for spaces of at
    most 200 points.
    """

    def __init__(self, dist, labels=None, check=True):
        dist = np.array(dist, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] == 0:
            raise ValidationError(f"distance matrix must be square and nonempty, got shape {dist.shape}")
        check_finite_values(dist, "dist")
        n = dist.shape[0]
        if not np.array_equal(dist, dist.T):
            i, j = np.argwhere(dist != dist.T)[0]
            raise ValidationError(f"distance matrix is not symmetric at ({i}, {j})")
        if np.any(np.diag(dist) != 0):
            raise ValidationError(f"nonzero diagonal at {int(np.flatnonzero(np.diag(dist))[0])}")
        if (dist < 0).any():
            i, j = np.argwhere(dist < 0)[0]
            raise ValidationError(f"negative distance at ({i}, {j})")
        off = dist + np.eye(n)
        if n > 1 and (off <= 0).any():
            i, j = np.argwhere(off <= 0)[0]
            raise ValidationError(f"distinct points {i}, {j} at distance zero")
        if check and n <= TRIANGLE_CHECK_MAX:
            # excess[x, y] = max_z d(x, z) + d(z, y) violations
            for k in range(n):
                excess = dist - (dist[:, [k]] + dist[[k], :])
                if excess.max() > 1e-12 * (1.0 + dist.max()):
                    i, j = np.unravel_index(np.argmax(excess), excess.shape)
                    raise ValidationError(f"triangle inequality fails for ({i}, {k}, {j})")
        dist.flags.writeable = False
        self.dist = dist
        self.labels = list(range(n)) if labels is None else list(labels)
        if len(self.labels) != n:
            raise ValidationError("one label per point is required")

    def __len__(self):
        return self.dist.shape[0]

    def __repr__(self):
        return f"FiniteMetricSpace(n={len(self)})"

    @property
    def diameter(self):
        return float(self.dist.max())

    @classmethod
    def from_points(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        return cls(0.5 * (dist + dist.T), labels=[tuple(p) for p in pts.tolist()])

    @classmethod
    def from_measures(cls, measures):
        """Pairwise exact W_2 distances between empirical measures."""
        from .transport import w2_exact

        measures = list(measures)
        n = len(measures)
        dist = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            dist[i, j] = dist[j, i] = w2_exact(measures[i], measures[j])[0]
        # exact solver round-off can break the triangle inequality at the 1e-15 level
        return cls(dist, check=False)


@dataclass(frozen=True)
class HopfLaxResult:
    q_values: np.ndarray
    d_plus: np.ndarray
    t: float
    q_exponent: float


def _objective(dist, f, t, q):
    return dist**q / (q * t ** (q - 1)) + f[None, :]


def _minimizers(dist, f, t, q):
    obj = _objective(dist, f, t, q)
    best = obj.min(axis=1)
    tied = obj <= best[:, None] + TIE_RTOL * (1.0 + np.abs(best[:, None]))
    return best, tied


def hopf_lax(space, f, t, q=2.0):
    """Q_t f and the maximal minimizer distance ``d_plus`` at every point."""
    f = check_finite_values(np.asarray(f, dtype=float).ravel(), "f")
    if f.size != len(space):
        raise ValidationError(f"f has {f.size} values for {len(space)} points")
    t = check_positive(t, "t")
    q = float(q)
    if not q > 1:
        raise ValidationError(f"exponent q must exceed 1, got {q}")
    best, tied = _minimizers(space.dist, f, t, q)
    d_plus = np.where(tied, space.dist, -np.inf).max(axis=1)
    return HopfLaxResult(q_values=best, d_plus=d_plus, t=t, q_exponent=q)


def lipschitz_constant(space, f):
    f = np.asarray(f, dtype=float).ravel()
    n = len(space)
    if n < 2:
        return 0.0
    off = ~np.eye(n, dtype=bool)
    return float((np.abs(f[:, None] - f[None, :])[off] / space.dist[off]).max())


def check_slope_bound(space, f, t, q=2.0, atol=1e-9):
    """max_x (d_plus[x]/t)^q - (q Lip f)^p; nonpositive when the slope bound holds."""
    res = hopf_lax(space, f, t, q)
    p = q / (q - 1.0)
    margin = float(((res.d_plus / res.t) ** q).max() - (q * lipschitz_constant(space, f)) ** p)
    if margin > atol:
        raise CheckFailedError("slope_bound", f"margin {margin:.3e} > 0")
    return margin


def _argmin_distance(dist_row, f, s, q):
    obj = dist_row**q / (q * s ** (q - 1)) + f
    best = obj.min()
    tied = obj <= best + TIE_RTOL * (1.0 + abs(best))
    return int(np.flatnonzero(tied)[np.argmax(dist_row[tied])])


def _pieces(dist_row, f, q, grid, max_halvings=200):
    """Breakpoints in (0, grid[-1]] where the selected minimizer changes, and the minimizer on each piece."""
    labels = [_argmin_distance(dist_row, f, r, q) for r in grid]
    # below the first grid node, halve until the zero-distance (self) candidate is selected
    lo, lo_label = grid[0], labels[0]
    for _ in range(max_halvings):
        if dist_row[lo_label] == 0.0:
            break
        lo *= 0.5
        lo_label = _argmin_distance(dist_row, f, lo, q)
    else:
        raise ValidationError("quadrature failure: minimizer never settles on the point itself as r -> 0")
    nodes = [lo] + list(grid)
    node_labels = [lo_label] + labels

    breaks, pieces = [0.0], [lo_label]

    def obj(y, s):
        return dist_row[y] ** q / (q * s ** (q - 1)) + f[y]

    def crossing(a, la, b, lb):
        # along g = s^(1-q) the objectives are affine, so two candidates cross once
        dq = dist_row[la] ** q - dist_row[lb] ** q
        if dq == 0.0:
            return None
        g = q * (f[lb] - f[la]) / dq
        if not g > 0:
            return None
        s = g ** (1.0 / (1.0 - q))
        return s if a < s <= b else None

    def split(a, la, b, lb, depth=0):
        # each candidate owns one interval, so equal labels at both ends mean no change in between
        if la == lb:
            return
        if b - a <= 1e-15 * b or depth > 200:
            breaks.append(b)
            pieces.append(lb)
            return
        s = crossing(a, la, b, lb)
        if s is None:
            s = 0.5 * (a + b)
        else:
            best = min(obj(y, s) for y in range(f.size))
            if obj(la, s) <= best + TIE_RTOL * (1.0 + abs(best)):
                breaks.append(s)
                pieces.append(lb)
                return
        lm = _argmin_distance(dist_row, f, s, q)
        split(a, la, s, lm, depth + 1)
        split(s, lm, b, lb, depth + 1)

    for a, la, b, lb in zip(nodes[:-1], node_labels[:-1], nodes[1:], node_labels[1:]):
        split(a, la, b, lb)
    breaks.append(nodes[-1])
    return breaks, pieces


def verify_identity_25(space, f, t, quad_points=512, q=2.0):
    """max_x |(f - Q_t f)(x)/t - (1/p) int_0^1 (D+_{rt} f(x) / (rt))^q dr|.

    The integrand is piecewise of the form c r^(-q): pieces are detected on
    a ``quad_points`` grid, breakpoints are solved for in closed form and
    each piece is integrated exactly.
    """
    if quad_points < 64:
        raise ValidationError("quadrature resolution must be at least 64")
    f = check_finite_values(np.asarray(f, dtype=float).ravel(), "f")
    t = check_positive(t, "t")
    q = float(q)
    p = q / (q - 1.0)
    res = hopf_lax(space, f, t, q)
    grid = np.arange(1, quad_points + 1) / quad_points
    worst = 0.0
    for x in range(len(space)):
        row = space.dist[x]
        breaks, pieces = _pieces(row, f, q, grid * t)
        breaks = np.asarray(breaks) / t
        integral = 0.0
        for a, b, y in zip(breaks[:-1], breaks[1:], pieces):
            if row[y] == 0.0 or b <= a:
                continue
            # int_a^b (D/(r t))^q dr with D = d(x, y)
            integral += (row[y] / t) ** q * (b ** (1 - q) - a ** (1 - q)) / (1 - q)
        lhs = (f[x] - res.q_values[x]) / t
        worst = max(worst, abs(lhs - integral / p))
    return float(worst)


def truncate_distance(space, a):
    """The metric min(d, a)."""
    a = check_positive(a, "a")
    return FiniteMetricSpace(np.minimum(space.dist, a), labels=space.labels)
