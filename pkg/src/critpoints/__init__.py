"""Kac-Rice statistics of critical points of planar isotropic Gaussian fields.

Modules
-------
covariance   kernels, Taylor coefficients, normalization, admissibility
moments      joint gradient/Hessian covariance, conditioning, whitening
kacrice      density, two-point function K2, asymptotics, typed correlations
fieldsim     spectral field simulation, critical point finder, pair statistics
"""

__version__ = "0.1.0"

from .covariance import (  # noqa: E402
    RadialKernel,
    TaylorCoeffs,
    bargmann_fock,
    check_admissibility,
    mixture,
    normalize,
    parse_model,
    rwm,
    taylor_coeffs,
)
from .estimators import CriticalPointFinder, KacRiceK2, PairCorrelationEstimator  # noqa: E402
from .fieldsim import SpectralSampler, empirical_pair_correlation, find_critical_points  # noqa: E402
from .kacrice import (  # noqa: E402
    asymptotic_constants,
    decay_exponent_fit,
    density_k1,
    k2,
    second_factorial_moment,
    typed_k2,
)
from .quadrature import SphereQuadrature  # noqa: E402

__all__ = [
    "RadialKernel",
    "TaylorCoeffs",
    "bargmann_fock",
    "rwm",
    "mixture",
    "parse_model",
    "taylor_coeffs",
    "normalize",
    "check_admissibility",
    "SphereQuadrature",
    "density_k1",
    "asymptotic_constants",
    "k2",
    "typed_k2",
    "second_factorial_moment",
    "decay_exponent_fit",
    "SpectralSampler",
    "find_critical_points",
    "empirical_pair_correlation",
    "KacRiceK2",
    "CriticalPointFinder",
    "PairCorrelationEstimator",
]
