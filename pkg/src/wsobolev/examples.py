"""Closed-form families used as end-to-end cross-checks.

* Dirac embedding: on m concentrated on Dirac masses the Wasserstein energy
  of psi(<phi, .>) is the Euclidean Dirichlet energy of psi o phi.
* Translation family: mu_omega = lambda shifted by omega, where the
  m-differential is the lambda-average of DF.
* Gaussians: the Bures closed form against exact transport on samples.
"""

from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from ._validation import CheckFailedError, ValidationError, check_points, check_weights
from .cylinder import CylinderFunction, coordinate
from .energy import m_differential_linear, pre_cheeger
from .geometry import EmpiricalMeasure, MetaMeasure
from .transport import gaussian_w2, w2_exact

__all__ = [
    "TranslationFamily",
    "dirac_embedding_energy",
    "translation_family_report",
    "gaussian_family_check",
    "gaussian_metric_check",
]


def dirac_embedding_energy(f_outer, f_feature, grid, masses=None, tol=1e-10):
    """(pCE_2 of psi(<phi, .>) over sum_w mass_w delta_{delta_w}, sum_w mass_w |grad(psi o phi)(w)|^2)."""
    grid = check_points(grid, name="grid")
    masses = np.ones(grid.shape[0]) if masses is None else check_weights(masses, grid.shape[0])
    if (masses <= 0).any():
        raise ValidationError("grid masses must be positive")
    F = CylinderFunction(f_outer, [f_feature])
    m = MetaMeasure((w, EmpiricalMeasure.dirac(x)) for w, x in zip(masses, grid))
    wasserstein = pre_cheeger(F, m, 2.0)
    dpsi = np.array([f_outer.partials(np.array([v]))[0] for v in f_feature.value(grid)])
    grads = dpsi[:, None] * f_feature.gradient(grid)
    euclidean = float(masses @ np.einsum("ij,ij->i", grads, grads))
    if abs(wasserstein - euclidean) > tol * (1.0 + abs(euclidean)):
        raise CheckFailedError("dirac_isometry", f"energies differ: {wasserstein!r} vs {euclidean!r}")
    return wasserstein, euclidean


@dataclass(frozen=True)
class TranslationFamily:
    """Translates lambda(. - omega) of a symmetric reference measure, with masses per omega."""

    lambda0: EmpiricalMeasure
    omegas: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        omegas = check_points(self.omegas, dim=self.lambda0.dim, name="omegas")
        masses = check_weights(self.masses, omegas.shape[0])
        if (masses <= 0).any():
            raise ValidationError("omega masses must be positive")
        lam = self.lambda0
        for i, a in enumerate(lam.atoms):
            match = np.flatnonzero(np.all(np.abs(lam.atoms + a) <= 1e-12, axis=1))
            if match.size != 1 or abs(lam.weights[match[0]] - lam.weights[i]) > 1e-12:
                raise ValidationError(f"reference measure is not symmetric: atom {i} has no mirrored partner")
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "masses", masses)

    def measure(self, omega):
        return EmpiricalMeasure(self.lambda0.atoms + np.asarray(omega, dtype=float), self.lambda0.weights)

    def meta_measure(self):
        return MetaMeasure((w, self.measure(o)) for w, o in zip(self.masses, self.omegas))


def translation_family_report(tf, F, tol=1e-8, orth_tol=1e-12, pyth_tol=1e-9):
    """Per-omega closed-form m-differential checked against the projection on constant fields.

    Returns a list of dicts with keys omega, F_hat, Dm_closed, Dm_projection,
    Dm_sq, energy, residual_sq, pythagoras_defect, orthogonality.
    """
    m = tf.meta_measure()
    d = tf.lambda0.dim
    md = m_differential_linear(F, m, [coordinate(k, d) for k in range(d)])
    rows = []
    for i, (omega, (_, mu)) in enumerate(zip(tf.omegas, m.components)):
        df = F.differential(mu, mu.atoms)
        closed = mu.weights @ df
        proj = md.projections[i]
        # every projection is a constant field; read it off the first atom
        dm = proj.values[0]
        res = md.residuals[i]
        energy = float(mu.weights @ np.einsum("ij,ij->i", df, df))
        row = {
            "omega": omega.tolist(),
            "F_hat": float(F(mu)),
            "Dm_closed": closed.tolist(),
            "Dm_projection": dm.tolist(),
            "Dm_sq": float(closed @ closed),
            "energy": energy,
            "residual_sq": res.norm() ** 2,
            "pythagoras_defect": float(md.pythagoras_defects()[i]),
            "orthogonality": abs(proj.inner(res)),
        }
        if np.abs(closed - dm).max() > tol * (1.0 + np.abs(closed).max()):
            raise CheckFailedError("translation_closed_form", f"omega {i}: projection {dm} vs closed form {closed}")
        if row["orthogonality"] > orth_tol * (1.0 + energy):
            raise CheckFailedError("residual_orthogonality", f"omega {i}: {row['orthogonality']:.3e}")
        if row["pythagoras_defect"] > pyth_tol * (1.0 + energy):
            raise CheckFailedError("pythagoras", f"omega {i}: defect {row['pythagoras_defect']:.3e}")
        if row["Dm_sq"] > energy * (1.0 + 1e-12) + 1e-15:
            raise CheckFailedError("projection_norm", f"omega {i}: |D_m F|^2 exceeds int |DF|^2")
        rows.append(row)
    return rows


def gaussian_family_check(pairs, n_samples=1000, seed=0, rtol=0.05):
    """Closed-form W2 against exact transport between ``n_samples`` draws of each Gaussian.

    Each pair uses its own stream (seed, pair index).  When both members are
    equal the same draws are reused, so the empirical distance is exactly 0.
    """
    rows = []
    for i, (g1, g2) in enumerate(pairs):
        rng = make_rng(seed, f"gaussian-{i}")
        closed = gaussian_w2(g1, g2)
        x = g1.sample(n_samples, rng)
        same = np.array_equal(g1.mean, g2.mean) and np.array_equal(g1.cov, g2.cov)
        y = x if same else g2.sample(n_samples, rng)
        empirical = w2_exact(EmpiricalMeasure(x), EmpiricalMeasure(y))[0]
        err = abs(empirical - closed) / closed if closed > 0 else abs(empirical)
        rows.append({"pair": i, "closed_form": closed, "empirical": empirical, "rel_error": err})
        if n_samples >= 1000 and g1.dim <= 2 and err > rtol:
            raise CheckFailedError("gaussian_empirical", f"pair {i}: relative error {err:.3%} > {rtol:.0%}")
    return rows


def gaussian_metric_check(gaussians, atol=1e-9):
    """Largest symmetry defect and triangle-inequality excess over all triples."""
    n = len(gaussians)
    D = np.array([[gaussian_w2(a, b) for b in gaussians] for a in gaussians])
    sym = float(np.abs(D - D.T).max()) if n else 0.0
    excess = float((D[:, None, :] - D[:, :, None] - D[None, :, :]).max()) if n else 0.0
    if sym > atol:
        raise CheckFailedError("gaussian_symmetry", f"defect {sym:.3e}")
    if excess > atol:
        raise CheckFailedError("gaussian_triangle", f"excess {excess:.3e}")
    return sym, excess
