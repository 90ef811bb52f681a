"""Estimator-style wrappers: configure in ``__init__``, compute in ``fit``.

The classes follow the scikit-learn conventions (``get_params``,
``set_params``, fitted attributes with a trailing underscore) so that
runs can be configured, cloned and compared uniformly.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .covariance import RadialKernel, check_admissibility, parse_model, taylor_coeffs
from .fieldsim import (
    DEFAULT_SPACING,
    NEWTON_TOL,
    FieldSample,
    PairHistogram,
    PointSet,
    empirical_pair_correlation,
    find_critical_points,
)
from .kacrice import asymptotic_constants, density_k1, k2, typed_k2
from .quadrature import SphereQuadrature

__all__ = ["KacRiceK2", "CriticalPointFinder", "PairCorrelationEstimator"]


def _kernel(model) -> RadialKernel:
    return parse_model(model) if isinstance(model, str) else model


class KacRiceK2(BaseEstimator):
    """Analytic two-point function of a catalog model.

    ``fit`` resolves the model and its constants; ``predict`` evaluates
    K2 at an array of radii.

    Parameters
    ----------
    model : str or RadialKernel
    n_samples : int
        Quadrature points per radius.
    seed : int
    type_pair : str or tuple, optional
        Restrict to ordered types, e.g. ``"min,min"``.
    method : str
        Passed to :func:`k2` or :func:`typed_k2`.
    threads : int, optional
    """

    def __init__(self, model="bf", n_samples=1_000_000, seed=0, type_pair=None, method=None, threads=None):
        self.model = model
        self.n_samples = n_samples
        self.seed = seed
        self.type_pair = type_pair
        self.method = method
        self.threads = threads

    def fit(self, X=None, y=None):
        self.kernel_ = _kernel(self.model)
        self.coeffs_ = taylor_coeffs(self.kernel_)
        self.admissibility_ = check_admissibility(self.coeffs_)
        self.asymptotics_ = asymptotic_constants(self.coeffs_)
        self.density_ = density_k1(self.coeffs_)
        return self

    def _quadrature(self) -> SphereQuadrature:
        return SphereQuadrature(int(self.n_samples), int(self.seed), threads=self.threads)

    def estimate(self, r) -> list:
        """K2Estimate records for each radius."""
        check_is_fitted(self, "coeffs_")
        radii = check_array(np.atleast_1d(r).reshape(-1, 1), ensure_all_finite=True).ravel()
        quad = self._quadrature()
        out = []
        for ri in radii:
            if self.type_pair is None:
                out.append(k2(self.kernel_, float(ri), quad, method=self.method or "sphere", coeffs=self.coeffs_))
            else:
                out.append(typed_k2(self.kernel_, float(ri), self.type_pair, quad,
                                    method=self.method or "auto", coeffs=self.coeffs_))
        return out

    def predict(self, r) -> np.ndarray:
        est = self.estimate(r)
        self.std_errors_ = np.array([e.std_error for e in est])
        return np.array([e.value for e in est])


class CriticalPointFinder(BaseEstimator, TransformerMixin):
    """Maps field samples to their critical point sets."""

    def __init__(self, spacing=DEFAULT_SPACING, newton_tol=NEWTON_TOL):
        self.spacing = spacing
        self.newton_tol = newton_tol

    def fit(self, X=None, y=None):
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if self.newton_tol > NEWTON_TOL:
            raise ValueError(f"newton_tol must be at most {NEWTON_TOL}")
        return self

    def transform(self, X) -> list[PointSet]:
        samples = [X] if isinstance(X, FieldSample) else list(X)
        return [
            find_critical_points(s, spacing=self.spacing, newton_tol=self.newton_tol, sample_id=i)
            for i, s in enumerate(samples)
        ]


class PairCorrelationEstimator(BaseEstimator):
    """Binned pair-correlation estimate from critical point sets.

    ``fit`` takes a list of :class:`PointSet`; ``predict`` returns the
    estimate of the bin containing each radius (NaN outside the bins).
    """

    def __init__(self, edges=None, type_pair=None):
        self.edges = edges
        self.type_pair = type_pair

    def fit(self, X, y=None):
        edges = np.linspace(0.0, 1.0, 11) if self.edges is None else np.asarray(self.edges, dtype=float)
        self.histogram_: PairHistogram = empirical_pair_correlation(list(X), edges, typed=self.type_pair)
        self.k2_hat_ = self.histogram_.k2_hat
        self.std_err_ = self.histogram_.std_err
        return self

    def predict(self, r) -> np.ndarray:
        check_is_fitted(self, "histogram_")
        r = np.atleast_1d(np.asarray(r, dtype=float))
        edges = self.histogram_.edges
        idx = np.searchsorted(edges, r, side="right") - 1
        inside = (idx >= 0) & (idx < len(edges) - 1)
        out = np.full(r.shape, np.nan)
        out[inside] = self.k2_hat_[idx[inside]]
        return out
