"""Self-checks of the analytic machinery, grouped for selective runs.

Each group returns a list of :class:`Check` rows.  ``run_checks`` runs the
requested groups; a fault can be injected into gamma2 to confirm that the
reconstruction checks notice it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np

from .covariance import check_admissibility, parse_model, taylor_coeffs
from .kacrice import asymptotic_constants
from .moments import (
    ENTRY_NAMES,
    R_MIN,
    assemble_sigma,
    conditional_delta,
    det_A,
    exact_entries,
    eigen_system,
    schur_complement,
    series_entries,
    sigma_blocks,
    whitening,
)
from .exceptions import NonPositiveEigenvalue
from .quadrature import SPHERE_AREA, SphereQuadrature

__all__ = ["Check", "GROUPS", "run_checks", "series_residual_slopes", "random_admissible"]

CATALOG = ("rwm", "bf", "mix:0.5")
PROBE_RADII = (0.05, 0.1, 0.3)
SERIES_GRID = np.geomspace(R_MIN, 1e-1, 12)
# first omitted order of each truncated series
SERIES_THRESHOLD = {"alpha": 5.5, "gamma": 5.5, "beta": 4.5}


@dataclass(frozen=True)
class Check:
    group: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_record(self) -> dict:
        return {
            "group": self.group,
            "check": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _blocks(model: str, r: float, fault: float):
    """(reference Sigma, blocks for the closed forms).

    The reference comes from plain radial derivatives, independent of the
    route used by ``sigma_blocks``; a fault only touches the closed forms.
    """
    kernel = parse_model(model)
    coeffs = taylor_coeffs(kernel, probe=False)
    blocks = sigma_blocks(kernel, r, coeffs)
    if fault:
        blocks = blocks.replace(gamma2=blocks.gamma2 + fault)
    return assemble_sigma(kernel, r, coeffs.g4), blocks


def series_residual_slopes(model: str, r=SERIES_GRID, dps: int = 40) -> dict[str, float]:
    """Log-log slope of |exact - series| for each Sigma entry.

    Near r = 1e-3 the residuals are around 1e-20, far below double
    rounding of entries of size 2, so both sides are evaluated in mpmath
    when the kernel supports it.
    """
    kernel = parse_model(model)
    coeffs = taylor_coeffs(kernel, probe=False)
    if kernel.has_tderiv:
        with mpmath.workdps(dps):
            resid = np.array([
                [float(abs(e - s)) for e, s in zip(exact_entries(kernel, mpmath.mpf(x)),
                                                   series_entries(coeffs, mpmath.mpf(x)))]
                for x in r
            ])
    else:
        exact = np.array([sigma_blocks(kernel, float(x), coeffs).entries for x in r])
        series = np.array([series_entries(coeffs, float(x)) for x in r])
        resid = np.abs(exact - series)
    r = np.asarray(r, dtype=float)
    out = {}
    for j, name in enumerate(ENTRY_NAMES):
        resid_j = resid[:, j]
        ok = resid_j > 0
        if np.count_nonzero(ok) < 4:
            out[name] = math.inf
            continue
        out[name] = float(np.polyfit(np.log(r[ok]), np.log(resid_j[ok]), 1)[0])
    return out


def _series_group(fault: float) -> list[Check]:
    rows = []
    for model in CATALOG:
        for name, slope in series_residual_slopes(model).items():
            thr = SERIES_THRESHOLD[name.rstrip("123")]
            rows.append(Check("series", f"{model}:{name}", slope >= thr, slope, thr, "log-log residual slope"))
    return rows


def _delta_group(fault: float) -> list[Check]:
    rows = []
    for model in CATALOG:
        for r in PROBE_RADII:
            sigma, used = _blocks(model, r, fault)
            direct = schur_complement(sigma)
            closed = conditional_delta(used).matrix()
            err = _rel(closed, direct)
            rows.append(Check("delta", f"{model}:r={r}:schur", err <= 1e-10, err, 1e-10))
            d_closed = det_A(used)
            d_generic = float(np.linalg.det(sigma[:4, :4]))
            err = abs(d_closed - d_generic) / abs(d_generic)
            rows.append(Check("delta", f"{model}:r={r}:detA", err <= 1e-12, err, 1e-12))
    return rows


def _eigen_group(fault: float) -> list[Check]:
    rows = []
    for model in CATALOG:
        for r in PROBE_RADII:
            sigma, used = _blocks(model, r, fault)
            direct = schur_complement(sigma)
            eig = eigen_system(conditional_delta(used))
            err = _rel(eig.reconstruct(), direct)
            rows.append(Check("eigen", f"{model}:r={r}:reconstruct", err <= 1e-10, err, 1e-10))
            ref = np.linalg.eigvalsh(direct)
            err = _rel(np.sort(eig.lambdas), ref)
            rows.append(Check("eigen", f"{model}:r={r}:spectrum", err <= 1e-10, err, 1e-10))
            try:
                M = whitening(eig)
                err = _rel(M @ M.T, direct)
            except NonPositiveEigenvalue:
                err = math.inf
            rows.append(Check("eigen", f"{model}:r={r}:whitening", err <= 1e-10, err, 1e-10))
            orth = float(np.max(np.abs(eig.Q.T @ eig.Q - np.eye(6))))
            rows.append(Check("eigen", f"{model}:r={r}:orthonormal", orth <= 1e-12, orth, 1e-12))
    return rows


def random_admissible(n: int, seed: int = 0) -> np.ndarray:
    """n pairs (g4, g6) with g4^2 < (5/2) g6 strictly."""
    rng = np.random.default_rng(seed)
    g4 = rng.uniform(0.05, 2.0, n)
    g6 = g4**2 / 2.5 * rng.uniform(1.01, 4.0, n)
    return np.column_stack([g4, g6])


def _af_group(fault: float) -> list[Check]:
    from .covariance import TaylorCoeffs

    worst = 0.0
    for g4, g6 in random_admissible(1000):
        c = asymptotic_constants(TaylorCoeffs(1.0, float(g4), float(g6), 0.0, True), strict=False)
        worst = max(worst, abs(c.a_F - c.a_F_simplified) / abs(c.a_F_simplified))
    rows = [Check("aF", "identity:1000-random", worst <= 1e-12, worst, 1e-12)]
    for model in CATALOG:
        coeffs = taylor_coeffs(parse_model(model), probe=False)
        check_admissibility(coeffs)
        c = asymptotic_constants(coeffs)
        err = abs(c.A**2 + c.B**2 - (10 * coeffs.g6 - 4 * coeffs.g4**2) * math.sqrt(c.phi))
        err /= abs((10 * coeffs.g6 - 4 * coeffs.g4**2) * math.sqrt(c.phi))
        rows.append(Check("aF", f"{model}:A2+B2", err <= 1e-12, err, 1e-12))
    return rows


def _sphere_group(fault: float) -> list[Check]:
    q = SphereQuadrature(200_000, seed=1)
    val, se = q.integrate(lambda s: np.ones(len(s)))
    err = abs(val - SPHERE_AREA)
    ok = err <= max(3 * se, 1e-9 * SPHERE_AREA)
    rows = [Check("sphere", "constant", ok, val, SPHERE_AREA)]
    # E[s_1^2] = 1/6 on S^5
    val, se = q.integrate(lambda s: s[:, 0] ** 2)
    ref = SPHERE_AREA / 6
    rows.append(Check("sphere", "second-moment", abs(val - ref) <= 4 * se, val, ref))
    return rows


GROUPS: dict[str, Callable[[float], list[Check]]] = {
    "series": _series_group,
    "delta": _delta_group,
    "eigen": _eigen_group,
    "aF": _af_group,
    "sphere": _sphere_group,
}


def run_checks(only: Sequence[str] | None = None, fault_gamma2: float = 0.0) -> list[Check]:
    """Run the named groups (all by default)."""
    names = list(GROUPS) if not only else list(only)
    unknown = [n for n in names if n not in GROUPS]
    if unknown:
        raise ValueError(f"unknown check groups {unknown}; choose from {sorted(GROUPS)}")
    rows: list[Check] = []
    for name in names:
        rows.extend(GROUPS[name](fault_gamma2))
    return rows
