"""Verifiable numerical calculus on the 2-Wasserstein space of finitely supported measures."""

from ._validation import CheckFailedError, SolverError, ValidationError
from .cylinder import CylinderFunction, OuterFunction, SmoothFeature, differential, grad_norm
from .distance_approx import (
    DistanceApproximator,
    MollifierFamily,
    PotentialDictionary,
    build_dictionary,
    f_nu_eps,
    g_eps_k,
    hat_measure,
    mollify,
)
from .energy import SobolevRegressor, m_differential_linear, pre_cheeger
from .geometry import EmpiricalMeasure, MetaMeasure, VectorField, lift_integral, make_measure
from .hopflax import FiniteMetricSpace, hopf_lax
from .transport import GaussianMeasure, PotentialPair, gaussian_w2, kantorovich_potentials, w2_1d, w2_exact

__version__ = "0.1.0"

__all__ = [
    "CheckFailedError",
    "SolverError",
    "ValidationError",
    "CylinderFunction",
    "OuterFunction",
    "SmoothFeature",
    "differential",
    "grad_norm",
    "DistanceApproximator",
    "MollifierFamily",
    "PotentialDictionary",
    "build_dictionary",
    "f_nu_eps",
    "g_eps_k",
    "hat_measure",
    "mollify",
    "SobolevRegressor",
    "m_differential_linear",
    "pre_cheeger",
    "EmpiricalMeasure",
    "MetaMeasure",
    "VectorField",
    "lift_integral",
    "make_measure",
    "FiniteMetricSpace",
    "hopf_lax",
    "GaussianMeasure",
    "PotentialPair",
    "gaussian_w2",
    "kantorovich_potentials",
    "w2_1d",
    "w2_exact",
]
