"""Kac-Rice predictions for critical points of planar isotropic Gaussian fields.

All functions expect a kernel (or coefficients) normalized to g2 = 1.  The
two-point function is

    K2(r) = (2 pi)^-2 det(A(r))^-1/2 E[|c1 c2|],   zeta ~ N(0, Delta(r)),

with ``c1 = zeta1 zeta3 - zeta2^2`` and ``c2 = zeta4 zeta6 - zeta5^2``.
Integrating out the radius of ``xi = M^-1 zeta`` turns this into
``12 / (pi^5 sqrt(det A)) * int_{S^5} |c1 c2| ds``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import mpmath
import numpy as np
from scipy import linalg, special

from .covariance import RadialKernel, TaylorCoeffs, check_admissibility, normalize, taylor_coeffs
from .exceptions import (
    CoefficientWarning,
    ComplexBranch,
    G8BranchNegative,
    NonPositiveEigenvalue,
    NonPositiveValue,
    QuadratureUnderResolved,
)
from .moments import (
    R_MIN,
    conditional_delta,
    delta_highprec,
    det_A,
    eigen_system,
    series_blocks,
    sigma_blocks,
    whitening,
)
from .quadrature import SphereQuadrature

__all__ = [
    "CriticalPointDensity",
    "density_k1",
    "expected_abs_det_hessian",
    "mc_abs_det_Y",
    "AsymptoticConstants",
    "asymptotic_constants",
    "K2Estimate",
    "k2",
    "k2_original_units",
    "typed_k2",
    "TYPES",
    "BCCoefficients",
    "bc_coefficients",
    "second_factorial_moment",
    "ExponentFit",
    "decay_exponent_fit",
    "whitening_matrix",
]

TYPES = ("min", "max", "saddle", "extremum")
RADIAL_FACTOR = 384.0  # int_0^inf rho^9 exp(-rho^2/2) d rho


# ---------------------------------------------------------------------------
# one-point quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalPointDensity:
    per_area: float
    radius: float
    count_in_ball: float
    scale: float = 1.0

    def in_original_units(self) -> "CriticalPointDensity":
        """Undo a normalization ``C(s r)``: densities divide by s^2."""
        s2 = self.scale**2
        return CriticalPointDensity(self.per_area / s2, self.radius, self.count_in_ball / s2, 1.0)


def density_k1(coeffs: TaylorCoeffs, radius: float = 1.0, scale: float = 1.0) -> CriticalPointDensity:
    """Expected number of critical points: (8/sqrt 3) g4 R^2 in a ball of radius R."""
    count = 8.0 / math.sqrt(3.0) * coeffs.g4 * radius**2
    return CriticalPointDensity(count / (math.pi * radius**2), radius, count, scale)


def expected_abs_det_hessian(coeffs: TaylorCoeffs) -> float:
    """E|det H_F(x)| = 8 g4 * 4/sqrt(3)."""
    return 32.0 * coeffs.g4 / math.sqrt(3.0)


def mc_abs_det_Y(n_samples: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo E|Y1 Y3 - Y2^2| for the unit-g4 Hessian covariance / 8."""
    cov = np.array([[3.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 3.0]])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xD37])))
    y = rng.standard_normal((n_samples, 3)) @ np.linalg.cholesky(cov).T
    v = np.abs(y[:, 0] * y[:, 2] - y[:, 1] ** 2)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_samples))


# ---------------------------------------------------------------------------
# near-diagonal constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticConstants:
    """phi, varphi, A, B and the near-diagonal constants.

    ``a_F`` is the closed-form constant ``(sqrt 3/pi^2)(A^2 + B^2)/sqrt(phi)``
    and ``a_F_simplified`` the same through ``A^2 + B^2 = (10 g6 - 4 g4^2)
    sqrt(phi)``.  ``k2_limit`` is the limit of the Kac-Rice integral ``k2(r)``
    as r -> 0 computed from the leading-order Hessian expansion with the
    ``(2 pi)^-5`` normalization carried through; it equals ``2 * a_F``.
    """

    phi: float
    varphi: float
    A: float
    B: float
    A2: float
    B2: float
    a_F: float
    a_F_simplified: float
    k2_limit: float


def _phi(g4, g6):
    return 100 * g4**4 - 396 * g4**2 * g6 + 405 * g6**2


def _varphi(g4, g6):
    return -20 * g4**4 + 88 * g4**2 * g6 - 99 * g6**2


def asymptotic_constants(coeffs: TaylorCoeffs, strict: bool = True) -> AsymptoticConstants:
    """phi, varphi, A, B and the near-diagonal constant.

    A^2 and B^2 are negative only when (9/4) g6 < g4^2 < (5/2) g6, a band
    that no covariance function reaches: the spectral moment inequality
    (E rho^4)^2 <= E rho^2 E rho^6 gives g4^2 <= (9/4) g6.  With
    ``strict=False`` the signed squares are kept (A, B become NaN when
    negative) instead of raising ``ComplexBranch``.
    """
    if not coeffs.normalized:
        raise ValueError("asymptotic_constants expects normalized coefficients (g2 = 1)")
    check_admissibility(coeffs)
    g4, g6 = coeffs.g4, coeffs.g6
    phi = _phi(g4, g6)
    varphi = _varphi(g4, g6)
    root = math.sqrt(max(phi, 0.0))
    lin = (2 * g4 * g4 - 5 * g6) * root
    A2 = varphi - lin
    B2 = -varphi - lin
    tol = 1e-12 * max(1.0, abs(varphi), abs(lin))
    if A2 < -tol or B2 < -tol:
        if strict:
            raise ComplexBranch(
                f"A^2 = {A2!r}, B^2 = {B2!r} for g4={g4!r}, g6={g6!r} "
                f"(g4^2 / g6 = {g4 * g4 / g6:.6g} exceeds the spectral bound 9/4)"
            )
    else:
        A2, B2 = max(A2, 0.0), max(B2, 0.0)
    pref = math.sqrt(3.0) / math.pi**2
    if phi > 0:
        a_F = pref * (A2 + B2) / root
    else:
        a_F = 0.0
    a_F_simple = pref * (10 * g6 - 4 * g4 * g4)
    return AsymptoticConstants(
        phi, varphi, math.sqrt(A2) if A2 >= 0 else math.nan, math.sqrt(B2) if B2 >= 0 else math.nan, A2, B2, a_F, a_F_simple, 2.0 * a_F_simple
    )


# ---------------------------------------------------------------------------
# b / c expansion coefficients
# ---------------------------------------------------------------------------


def _real_sqrt(x: float, label: str, scale: float = 1.0, exc=ComplexBranch) -> float:
    if x < -1e-12 * max(1.0, scale):
        raise exc(f"negative argument {x!r} under square root in {label}")
    return math.sqrt(max(x, 0.0))


@dataclass(frozen=True)
class BCCoefficients:
    """Leading coefficients of b_1 = -tr H_1 and c_1 = det H_1 in powers of r.

    Arrays are evaluated at the supplied points.  The second-point
    coefficients follow from b_{2,0} = b_{1,0}, b_{2,1} = -b_{1,1},
    b_{2,2} = b_{1,2}, c_{2,1} = -c_{1,1}, c_{2,2} = c_{1,2}, and
    c_{1,0} = c_{2,0} = 0.
    """

    b10: np.ndarray
    b11: np.ndarray
    b12: np.ndarray
    c11: np.ndarray
    c12: np.ndarray
    sign_defaulted: bool = False

    @property
    def c10(self):
        return np.zeros_like(self.b10)

    @property
    def b20(self):
        return self.b10

    @property
    def b21(self):
        return -self.b11

    @property
    def b22(self):
        return self.b12

    @property
    def c20(self):
        return np.zeros_like(self.b10)

    @property
    def c21(self):
        return -self.c11

    @property
    def c22(self):
        return self.c12


def bc_coefficients(coeffs: TaylorCoeffs, s) -> BCCoefficients:
    """Evaluate b_{1,0}, b_{1,1}, b_{1,2}, c_{1,1}, c_{1,2} at unit vectors ``s``.

    ``s`` has shape (..., 6); components are xi_1..xi_6.  When
    ``2 g4^2 - 3 g6`` vanishes its sign is taken as +1 and a
    ``CoefficientWarning`` is issued.
    """
    s = np.asarray(s, dtype=float)
    x1, x3, x4, x5, x6 = (s[..., i] for i in (0, 2, 3, 4, 5))
    g4, g6, g8 = coeffs.g4, coeffs.g6, coeffs.g8
    const = asymptotic_constants(coeffs)
    phi, A, B = const.phi, const.A, const.B
    rphi = math.sqrt(phi)
    qphi = math.sqrt(rphi)

    g8_arg = 280 * g4 * g8 - 153 * g6 * g6
    g8_root = _real_sqrt(g8_arg, "280 g4 g8 - 153 g6^2", abs(153 * g6 * g6), G8BranchNegative)

    d = 2 * g4 * g4 - 3 * g6
    defaulted = abs(d) <= 1e-10
    if defaulted:
        warnings.warn(
            "2 g4^2 - 3 g6 = 0; its sign is taken as +1 in b_{1,1} and c_{1,2}",
            CoefficientWarning,
            stacklevel=2,
        )
    sgn = 1.0 if defaulted else math.copysign(1.0, d)

    p = -10 * g4 * g4 + 27 * g6
    m = 8 * g4 * g4 - 18 * g6
    sc = max(abs(p), rphi, abs(m) * rphi, phi)
    u_plus = _real_sqrt(p + rphi, "-10 g4^2 + 27 g6 + sqrt(phi)", sc)
    u_minus = _real_sqrt(p - rphi, "-10 g4^2 + 27 g6 - sqrt(phi)", sc)
    w_plus = _real_sqrt(phi + m * rphi, "phi + (8 g4^2 - 18 g6) sqrt(phi)", sc)
    w_minus = _real_sqrt(phi - m * rphi, "phi - (8 g4^2 - 18 g6) sqrt(phi)", sc)
    v_plus = _real_sqrt(rphi + m, "sqrt(phi) + 8 g4^2 - 18 g6", sc)
    v_minus = _real_sqrt(rphi - m, "sqrt(phi) - (8 g4^2 - 18 g6)", sc)

    lin_ab = x3 * A + x4 * B
    sg4 = math.sqrt(g4)
    b10 = -8.0 / math.sqrt(3.0) * sg4 * x6
    b11 = 3 * math.sqrt(2.0) / qphi * lin_ab + math.sqrt(2.0) / rphi * sgn * (
        -x4 * u_plus * w_plus + x3 * u_minus * w_minus
    )
    b12 = 2.0 / math.sqrt(3.0) * g6 / sg4 * x6 + x5 * g8_root / sg4
    c11 = -8 * math.sqrt(6.0) * sg4 / qphi * x6 * (x4 * B + x3 * A)
    c12 = (
        4 * (2 * g4 * g4 - 9 * g6) * x1**2
        + 6.0 / rphi * sgn * lin_ab * (-x4 * u_plus * v_plus + x3 * u_minus * v_minus)
        + 8 * x6 * (g6 * x6 + x5 * g8_root / math.sqrt(3.0))
    )
    return BCCoefficients(b10, b11, b12, c11, c12, defaulted)


# ---------------------------------------------------------------------------
# two-point function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class K2Estimate:
    r: float
    value: float
    std_error: float
    n_samples: int
    seed: int
    type_pair: tuple[str, str] | None = None
    model: str = ""
    method: str = "sphere"

    def to_record(self) -> dict:
        rec = {
            "model": self.model,
            "r": self.r,
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }
        if self.type_pair is not None:
            rec["type_pair"] = f"{self.type_pair[0]},{self.type_pair[1]}"
        return rec


def _blocks(kernel: RadialKernel, coeffs: TaylorCoeffs, r: float):
    if r < R_MIN:
        return series_blocks(coeffs, r)
    return sigma_blocks(kernel, r, coeffs)


def whitening_matrix(kernel: RadialKernel, r: float, coeffs: TaylorCoeffs | None = None):
    """(M, det A) at radius r, with M M^t = Delta(r)."""
    if coeffs is None:
        coeffs = taylor_coeffs(kernel, probe=False)
    blocks = _blocks(kernel, coeffs, r)
    dA = det_A(blocks)
    if r < R_MIN:
        # the truncated series leaves Delta indefinite at the r^4 level;
        # use the high precision route when the kernel has one
        try:
            delta = np.array(delta_highprec(kernel, r, coeffs.g4).tolist(), dtype=float)
        except (TypeError, AttributeError, NotImplementedError):
            delta = None
        if delta is not None:
            lam, Q = np.linalg.eigh((delta + delta.T) / 2)
            return Q * np.sqrt(np.clip(lam, 0.0, None)), dA
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eig = eigen_system(conditional_delta(blocks))
    return whitening(eig), dA


def _hessian_invariants(z: np.ndarray):
    b1 = -(z[..., 0] + z[..., 2])
    c1 = z[..., 0] * z[..., 2] - z[..., 1] ** 2
    b2 = -(z[..., 3] + z[..., 5])
    c2 = z[..., 3] * z[..., 5] - z[..., 4] ** 2
    return b1, c1, b2, c2


def _type_mask(kind: str, b, c):
    if kind == "min":
        return (c > 0) & (b < 0)
    if kind == "max":
        return (c > 0) & (b > 0)
    if kind == "saddle":
        return c < 0
    if kind == "extremum":
        return c > 0
    raise ValueError(f"unknown critical point type {kind!r}; expected one of {TYPES}")


def _check_pair(pair) -> tuple[str, str] | None:
    if pair is None:
        return None
    if isinstance(pair, str):
        pair = tuple(p.strip() for p in pair.split(","))
    pair = tuple(pair)
    if len(pair) != 2 or any(p not in TYPES for p in pair):
        raise ValueError(f"type pair must be two of {TYPES}, got {pair!r}")
    return pair


def _sphere_integrand(M: np.ndarray, pair):
    def f(s):
        z = s @ M.T
        b1, c1, b2, c2 = _hessian_invariants(z)
        v = np.abs(c1 * c2)
        if pair is not None:
            v = v * (_type_mask(pair[0], b1, c1) & _type_mask(pair[1], b2, c2))
        return v

    return f


# Gauss-Legendre rule for short intervals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_CLIP = 40.0


def _gauss_poly_integral(coef: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int_a^b P(t) phi(t) dt for quartic P (coef[..., k] multiplies t^k)."""
    width = b - a
    out = np.zeros_like(a)

    short = width <= 1.0
    if np.any(short):
        aa, bb, cc = a[short], b[short], coef[short]
        half, mid = (bb - aa) / 2, (bb + aa) / 2
        t = mid[:, None] + half[:, None] * _GL_X[None, :]
        pt = np.polynomial.polynomial.polyval(t.T, cc.T, tensor=False).T
        phi = np.exp(-t * t / 2) / math.sqrt(2 * math.pi)
        out[short] = half * np.sum(_GL_W * pt * phi, axis=1)

    long_ = ~short
    if np.any(long_):
        aa, bb, cc = a[long_], b[long_], coef[long_]
        pa = np.exp(-aa * aa / 2) / math.sqrt(2 * math.pi)
        pb = np.exp(-bb * bb / 2) / math.sqrt(2 * math.pi)
        m0 = np.where(aa > 0, special.ndtr(-aa) - special.ndtr(-bb), special.ndtr(bb) - special.ndtr(aa))
        m1 = pa - pb
        m2 = aa * pa - bb * pb + m0
        m3 = aa**2 * pa - bb**2 * pb + 2 * m1
        m4 = aa**3 * pa - bb**3 * pb + 3 * m2
        mom = np.stack([m0, m1, m2, m3, m4], axis=1)
        out[long_] = np.sum(cc * mom, axis=1)
    return out


def _quad_roots(q2, q1, q0):
    """Real roots of q2 t^2 + q1 t + q0 (NaN where absent)."""
    disc = q1 * q1 - 4 * q2 * q0
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    # numerically stable pair
    qq = -0.5 * (q1 + np.copysign(sq, q1))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(q2 != 0, qq / q2, np.where(q1 != 0, -q0 / q1, np.nan))
        r2 = np.where(qq != 0, q0 / qq, np.nan)
        r2 = np.where(q2 != 0, r2, np.nan)
    return r1, r2


def _line_integrand(M: np.ndarray, pair):
    """Exact integral along the direction transverse to both b-hyperplanes.

    For g ~ N(0, I_6) write g = tau n + w with w orthogonal to n.  Along the
    line, b_i are linear and c_i quadratic in tau, so types are constant
    between their roots and |c1 c2| phi(tau) integrates in closed form.
    """
    l1 = -(M[0] + M[2])
    l2 = -(M[3] + M[5])
    n = l1 + l2
    if np.linalg.norm(n) < 1e-300:
        n = l1
    n = n / np.linalg.norm(n)
    d = M @ n

    def f(g):
        w = g - np.outer(g @ n, n)
        z = w @ M.T
        b1_0, b2_0 = -(z[:, 0] + z[:, 2]), -(z[:, 3] + z[:, 5])
        b1_s, b2_s = -(d[0] + d[2]), -(d[3] + d[5])
        c1 = (d[0] * d[2] - d[1] ** 2, z[:, 0] * d[2] + z[:, 2] * d[0] - 2 * z[:, 1] * d[1],
              z[:, 0] * z[:, 2] - z[:, 1] ** 2)
        c2 = (d[3] * d[5] - d[4] ** 2, z[:, 3] * d[5] + z[:, 5] * d[3] - 2 * z[:, 4] * d[4],
              z[:, 3] * z[:, 5] - z[:, 4] ** 2)
        m = len(g)
        q1 = [np.broadcast_to(c, (m,)) for c in c1]
        q2 = [np.broadcast_to(c, (m,)) for c in c2]
        with np.errstate(divide="ignore", invalid="ignore"):
            roots = [
                np.where(b1_s != 0, -b1_0 / b1_s, np.nan),
                np.where(b2_s != 0, -b2_0 / b2_s, np.nan),
                *_quad_roots(*q1),
                *_quad_roots(*q2),
            ]
        pts = np.stack(roots, axis=1)
        pts = np.where(np.isfinite(pts), np.clip(pts, -_CLIP, _CLIP), _CLIP)
        pts.sort(axis=1)
        edges = np.concatenate([np.full((m, 1), -_CLIP), pts, np.full((m, 1), _CLIP)], axis=1)
        # quartic P = c1 c2, ascending powers
        a1 = np.stack([q1[2], q1[1], q1[0]], axis=1)
        a2 = np.stack([q2[2], q2[1], q2[0]], axis=1)
        poly = np.zeros((m, 5))
        for i in range(3):
            for j in range(3):
                poly[:, i + j] += a1[:, i] * a2[:, j]
        total = np.zeros(m)
        for k in range(edges.shape[1] - 1):
            lo, hi = edges[:, k], edges[:, k + 1]
            live = hi > lo
            if not np.any(live):
                continue
            lo, hi, coef = lo[live], hi[live], poly[live]
            mid = (lo + hi) / 2
            zt = z[live] + mid[:, None] * d[None, :]
            b1, c1m, b2, c2m = _hessian_invariants(zt)
            sign = np.sign(c1m * c2m)
            keep = sign != 0
            if pair is not None:
                keep &= _type_mask(pair[0], b1, c1m) & _type_mask(pair[1], b2, c2m)
            if not np.any(keep):
                continue
            val = _gauss_poly_integral(coef[keep], lo[keep], hi[keep])
            idx = np.flatnonzero(live)[keep]
            total[idx] += sign[keep] * val
        return total

    return f


# Hessian coordinates: H = [[p + q, s], [s, p - q]] so that b = -2p and
# c = p^2 - q^2 - s^2.  Rows map zeta to (p1, p2, q1, q2, s1, s2); the
# strongly correlated partners sit next to each other so that each
# truncation sees the constraint of its partner already resolved.
_PQS = np.zeros((6, 6))
_PQS[0, [0, 2]] = 0.5
_PQS[1, [3, 5]] = 0.5
_PQS[2, 0], _PQS[2, 2] = 0.5, -0.5
_PQS[3, 3], _PQS[3, 5] = 0.5, -0.5
_PQS[4, 1] = 1.0
_PQS[5, 4] = 1.0
_SIGN = {"min": 1.0, "max": -1.0, "saddle": 0.0, "extremum": 0.0}


def _semidefinite_cholesky(a: np.ndarray) -> np.ndarray:
    """Lower factor of a PSD matrix; non-positive pivots give zero columns."""
    n = a.shape[0]
    low = np.zeros_like(a)
    tol = 1e-15 * max(float(np.max(np.diag(a))), 0.0)
    for j in range(n):
        piv = a[j, j] - low[j, :j] @ low[j, :j]
        if piv <= tol:
            continue
        low[j, j] = math.sqrt(piv)
        low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def _normal_mass(lo, hi):
    """Phi(hi) - Phi(lo), accurate in either tail."""
    upper = lo > 0
    return np.where(upper, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))


def _truncated_inside(u, lo, hi):
    """Draw from N(0,1) restricted to [lo, hi] by inversion; returns (x, mass)."""
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    fa = special.ndtr(a)
    mass = special.ndtr(b) - fa
    with np.errstate(invalid="ignore"):
        x = special.ndtri(np.clip(fa + u * mass, 1e-300, 1.0))
    x = np.clip(np.where(np.isfinite(x), x, a), a, b)
    return np.where(flip, -x, x), np.maximum(mass, 0.0)


def _truncated_outside(u, lo, hi):
    """Draw from N(0,1) restricted to (-inf, lo] U [hi, inf)."""
    left = special.ndtr(lo)
    right = special.ndtr(-hi)
    mass = left + right
    with np.errstate(invalid="ignore", divide="ignore"):
        cut = np.where(mass > 0, left / mass, 0.5)
        take_left = u < cut
        ul = np.where(take_left, u / np.where(cut > 0, cut, 1.0), 0.0)
        ur = np.where(take_left, 0.0, (u - cut) / np.where(cut < 1, 1 - cut, 1.0))
    xl, _ = _truncated_inside(np.clip(ul, 0, 1), np.full_like(lo, -np.inf), lo)
    xr, _ = _truncated_inside(np.clip(ur, 0, 1), hi, np.full_like(hi, np.inf))
    return np.where(take_left, xl, xr), mass


def _arc(theta_lo, width, sign, normal):
    """Intersect an angular arc with the half-plane sign * (normal . e) > 0."""
    if sign == 0.0:
        return theta_lo, width
    start = math.atan2(sign * normal[1], sign * normal[0]) - math.pi / 2
    if width >= 2 * math.pi:
        return start, math.pi
    d = (start - theta_lo) % (2 * math.pi)
    if d < width:
        return start, min(math.pi, width - d)
    d2 = (theta_lo - start) % (2 * math.pi)
    if d2 < math.pi:
        return theta_lo, min(width, math.pi - d2)
    return theta_lo, 0.0


def _pqs_factor_highprec(kernel, r, g4, dps=40) -> np.ndarray:
    """Lower Cholesky factor of cov(p1, p2, q1, s1, q2, s2), computed in mpmath."""
    with mpmath.workdps(dps):
        delta = delta_highprec(kernel, r, g4, dps)
        t = mpmath.matrix(_PQS.tolist())
        gam = t * delta * t.T
        n = 6
        low = mpmath.matrix(n, n)
        tol = mpmath.mpf(10) ** (-dps + 5) * max(gam[i, i] for i in range(n))
        for j in range(n):
            piv = gam[j, j] - mpmath.fsum(low[j, k] ** 2 for k in range(j))
            if piv <= tol:
                continue
            low[j, j] = mpmath.sqrt(piv)
            for i in range(j + 1, n):
                low[i, j] = (gam[i, j] - mpmath.fsum(low[i, k] * low[j, k] for k in range(j))) / low[j, j]
        return np.array([[float(low[i, j]) for j in range(n)] for i in range(n)])


def _pqs_factor(kernel, r, coeffs, M) -> np.ndarray:
    if r >= R_MIN:
        try:
            return _pqs_factor_highprec(kernel, r, coeffs.g4)
        except (TypeError, AttributeError, NotImplementedError):
            # kernels without an mpmath path fall back to double precision
            pass
    return _semidefinite_cholesky(_PQS @ (M @ M.T) @ _PQS.T)


def _conditional_integrand(low: np.ndarray, pair):
    """Sequential truncated-conditional sampler for a typed expectation.

    Returns a function of standard normal 6-vectors whose mean is
    E[|c1 c2| 1{types}] under zeta ~ N(0, Delta).  The pair (p1, p2) is drawn
    exactly from the wedge allowed by the trace signs; q1, s1, q2, s2 are then
    drawn one at a time from their conditional laws truncated to the disc
    (extremum) or its complement (saddle), and the sample carries the product
    of the truncated masses as weight.  Thin type domains are sampled
    directly instead of being hit by chance.
    """
    lp = low[:2, :2]
    # p = lp e with e ~ N(0, I_2); constraints sign_i * p_i > 0
    start, width = -math.pi, 2 * math.pi
    for i, kind in enumerate(pair):
        start, width = _arc(start, width, _SIGN[kind], lp[i])
    wedge_mass = width / (2 * math.pi)
    extremum = [kind != "saddle" for kind in pair]

    def f(g):
        n = len(g)
        out = np.zeros(n)
        if wedge_mass <= 0:
            return out
        u = special.ndtr(g)
        rad = np.sqrt(-2.0 * special.log1p(-np.clip(u[:, 0], 0, 1 - 1e-16)))
        ang = start + width * u[:, 1]
        e = np.zeros((n, 6))
        e[:, 0], e[:, 1] = rad * np.cos(ang), rad * np.sin(ang)
        x = np.zeros((n, 6))
        x[:, :2] = e[:, :2] @ lp.T
        weight = np.full(n, wedge_mass)
        for k in range(2, 6):
            side = k % 2
            mu = e[:, :k] @ low[k, :k]
            sd = low[k, k]
            p = x[:, side]
            inside = extremum[side]
            if k < 4:
                bound = np.abs(p)
                if not inside:
                    # saddle: q is unrestricted
                    e[:, k] = special.ndtri(np.clip(u[:, k], 1e-300, 1 - 1e-16))
                    x[:, k] = mu + sd * e[:, k]
                    continue
            else:
                q = x[:, k - 2]
                bound = np.sqrt(np.maximum(p * p - q * q, 0.0))
            if sd == 0.0:
                x[:, k] = mu
                ok = np.abs(mu) < bound if inside else np.abs(mu) > bound
                weight = weight * ok
                continue
            lo, hi = (-bound - mu) / sd, (bound - mu) / sd
            if inside:
                z, mass = _truncated_inside(u[:, k], lo, hi)
            else:
                z, mass = _truncated_outside(u[:, k], lo, hi)
            e[:, k] = z
            x[:, k] = mu + sd * z
            weight = weight * mass
        c1 = x[:, 0] ** 2 - x[:, 2] ** 2 - x[:, 4] ** 2
        c2 = x[:, 1] ** 2 - x[:, 3] ** 2 - x[:, 5] ** 2
        out = weight * np.abs(c1 * c2)
        return np.where(np.isfinite(out), out, 0.0)

    return f


def _pqs_weight(x: np.ndarray, pair) -> np.ndarray:
    """|c1 c2| on the requested type domain, with x in (p, q, s) coordinates."""
    p1, p2, q1, q2, s1, s2 = x.T
    c1 = p1 * p1 - q1 * q1 - s1 * s1
    c2 = p2 * p2 - q2 * q2 - s2 * s2
    v = np.abs(c1 * c2)
    if pair is not None:
        v = v * (_type_mask(pair[0], -2 * p1, c1) & _type_mask(pair[1], -2 * p2, c2))
    return v


def _quad_form(chol: np.ndarray, u: np.ndarray) -> np.ndarray:
    y = linalg.solve_triangular(chol, u.T, lower=True, check_finite=False)
    return np.sum(y * y, axis=0)


def _acg_logpdf(u: np.ndarray, chol: np.ndarray, logdet: float) -> np.ndarray:
    """log density of the angular central Gaussian law, without the 1/pi^3."""
    return -0.5 * logdet - 3.0 * np.log(_quad_form(chol, u))


class _ACGImportance:
    """Importance sampling of a typed Kac-Rice expectation over directions.

    For f homogeneous of degree 4 and x ~ N(0, G) in (p, q, s) coordinates,

        E f = (48 / pi^3) det(G)^-1/2 int_{S^5} f(u) (u^t G^-1 u)^-5 du.

    Directions are drawn from a mixture of angular central Gaussian laws:
    a fixed component with shape G (the plain sphere rule, kept as a
    defensive term) plus a few components fitted by weighted EM with Tyler
    fixed-point updates, while the target is annealed from G + eps I down
    to G.  The type domains of nearly singular fields (the random wave
    model) are thin and can split into several pieces; the annealing finds
    them and the mixture covers them.  Components get fixed row fractions
    of every chunk and the weights use the full mixture density, so the
    estimator is unbiased.
    """

    def __init__(self, low: np.ndarray, pair, seed: int = 0, pilot: int = 20_000,
                 n_components: int = 2, defensive: float = 0.1, em_steps: int = 4,
                 final_rounds: int = 3):
        diag = np.diag(low)
        if np.any(diag <= 0):
            raise NonPositiveEigenvalue("conditional Hessian covariance is singular in (p, q, s) form")
        self.low = low
        self.pair = pair
        self.defensive = defensive
        self.em_steps = em_steps
        self.logdet_g = 2.0 * float(np.sum(np.log(diag)))
        gam = low @ low.T
        scale = float(np.trace(gam)) / 6.0
        floor = max(1e-3 * float(np.linalg.eigvalsh(gam)[0]), 1e-12 * scale)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xAC6])))
        shapes = [gam / scale + t * np.eye(6) for t in np.geomspace(1e-2, 1.0, n_components)]
        # mix[0] belongs to the fixed component shaped like the current target
        mix = np.full(n_components + 1, 1.0 / (n_components + 1))
        eps = scale
        while eps >= floor:
            shapes, mix = self._fit(shapes, mix, _chol_logdet(gam + eps * np.eye(6)), rng, pilot)
            eps /= 10.0
        for _ in range(final_rounds):
            shapes, mix = self._fit(shapes, mix, (low, self.logdet_g), rng, pilot)
        self.components = self._components(shapes, mix, (low, self.logdet_g))

    def _components(self, shapes, mix, target):
        mix = np.asarray(mix, dtype=float)
        mix = np.maximum(mix, 0.0)
        mix[0] = max(mix[0], self.defensive)
        mix /= mix.sum()
        comps = [(target[0], target[1], float(mix[0]))]
        for shp, m in zip(shapes, mix[1:]):
            comps.append((*_chol_logdet(shp), float(m)))
        return comps

    @staticmethod
    def _draw(g, components):
        """Map standard normal rows to directions, stratified over components."""
        x = np.empty_like(g)
        n = len(g)
        edges = np.round(np.cumsum([0.0] + [w for _, _, w in components]) * n).astype(int)
        edges[-1] = n
        for (chol, _, _), a, b in zip(components, edges[:-1], edges[1:]):
            x[a:b] = g[a:b] @ chol.T
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def _log_weights(self, u, components, target):
        chol_t, logdet_t = target
        f = _pqs_weight(u, self.pair)
        dens = np.array([math.log(w) + _acg_logpdf(u, c, ld) for c, ld, w in components if w > 0])
        with np.errstate(divide="ignore"):
            lt = math.log(48.0) + np.log(f) - 5.0 * np.log(_quad_form(chol_t, u)) - 0.5 * logdet_t
        return lt - np.logaddexp.reduce(dens, axis=0)

    def _fit(self, shapes, mix, target, rng, n):
        # pilot rounds spread samples evenly over the components
        even = np.full(len(mix), 1.0 / len(mix))
        components = self._components(shapes, even, target)
        u = self._draw(rng.standard_normal((n, 6)), components)
        lw = self._log_weights(u, components, target)
        hit = np.isfinite(lw)
        if np.count_nonzero(hit) < 12 * len(shapes):
            return shapes, mix
        w = np.exp(lw[hit] - lw[hit].max())
        # the law is invariant under s -> -s (reflection across the axis
        # through both points); the reflected copies keep the fit symmetric
        flip = u[hit] * np.array([1, 1, 1, 1, -1, -1])
        uu = np.concatenate([u[hit], flip])
        w = np.concatenate([w, w])
        shapes = [shp.copy() for shp in shapes]
        mix = np.asarray(mix, dtype=float).copy()
        fixed = _acg_logpdf(uu, *target)
        for _ in range(self.em_steps):
            logp = np.array(
                [math.log(max(mix[0], 1e-300)) + fixed]
                + [math.log(max(m, 1e-300)) + _acg_logpdf(uu, *_chol_logdet(shp))
                   for shp, m in zip(shapes, mix[1:])]
            )
            resp = np.exp(logp - np.logaddexp.reduce(logp, axis=0)) * w
            tot = resp.sum(axis=1)
            mix = np.maximum(tot / tot.sum(), 1e-3)
            mix /= mix.sum()
            for k, shp in enumerate(shapes, start=1):
                if tot[k] <= 0:
                    continue
                d = _quad_form(np.linalg.cholesky(shp), uu)
                new = 6.0 * (uu.T * (resp[k] / d)) @ uu / tot[k]
                shapes[k - 1] = new / (np.trace(new) / 6.0) + 1e-12 * np.eye(6)
        return shapes, mix

    def integrand(self):
        components, target = self.components, (self.low, self.logdet_g)

        def f(g):
            u = self._draw(g, components)
            lw = self._log_weights(u, components, target)
            return np.where(np.isfinite(lw), np.exp(lw), 0.0)

        return f


def _chol_logdet(a):
    c = np.linalg.cholesky(a)
    return c, 2.0 * float(np.sum(np.log(np.diag(c))))


def _k2_estimate(kernel, r, quad, pair, method, rtol, coeffs) -> K2Estimate:
    if coeffs is None:
        coeffs = taylor_coeffs(kernel, probe=False)
    M, dA = whitening_matrix(kernel, r, coeffs)
    if method == "sphere":
        integral, se = quad.integrate(_sphere_integrand(M, pair))
        pref = 12.0 / (math.pi**5 * math.sqrt(dA))
    elif method == "conditional":
        if pair is None:
            raise ValueError("method 'conditional' needs a type pair")
        low = _pqs_factor(kernel, r, coeffs, M)
        integral, se = quad.expectation(_conditional_integrand(low, pair))
        pref = 1.0 / ((2 * math.pi) ** 2 * math.sqrt(dA))
    elif method == "importance":
        low = _pqs_factor(kernel, r, coeffs, M)
        sampler = _ACGImportance(low, pair, seed=quad.seed)
        integral, se = quad.expectation(sampler.integrand())
        pref = 1.0 / ((2 * math.pi) ** 2 * math.sqrt(dA))
    elif method == "line":
        integral, se = quad.expectation(_line_integrand(M, pair))
        pref = 1.0 / ((2 * math.pi) ** 2 * math.sqrt(dA))
    else:
        raise ValueError(
            f"method must be 'sphere', 'line', 'conditional' or 'importance', got {method!r}"
        )
    value, err = pref * integral, pref * se
    if rtol is not None and err > rtol * abs(value):
        raise QuadratureUnderResolved(
            f"K2(r={r}) = {value:.6g} +- {err:.2g} exceeds relative tolerance {rtol}"
        )
    return K2Estimate(
        float(r), float(value), float(err), int(quad.n_samples), int(quad.seed), pair,
        getattr(kernel, "name", ""), method,
    )


def k2(
    kernel: RadialKernel,
    r: float,
    quad: SphereQuadrature | None = None,
    rtol: float | None = None,
    method: str = "sphere",
    coeffs: TaylorCoeffs | None = None,
) -> K2Estimate:
    """Two-point function K2(r) of the critical points, by S^5 quadrature."""
    quad = quad or SphereQuadrature()
    return _k2_estimate(kernel, r, quad, None, method, rtol, coeffs)


def k2_original_units(
    kernel: RadialKernel,
    r: float,
    quad: SphereQuadrature | None = None,
    **kwargs,
) -> K2Estimate:
    """K2 at distance r for a kernel that need not have g2 = 1.

    The kernel is normalized as C_n(rho) = C(s rho); distances map as
    rho = r / s and K2 picks up a factor s^-4.
    """
    kn = normalize(kernel)
    s = kn.scale / kernel.scale
    est = k2(kn, r / s, quad, **kwargs)
    return replace(est, r=float(r), value=est.value / s**4, std_error=est.std_error / s**4)


def typed_k2(
    kernel: RadialKernel,
    r: float,
    pair,
    quad: SphereQuadrature | None = None,
    rtol: float | None = None,
    method: str = "auto",
    coeffs: TaylorCoeffs | None = None,
) -> K2Estimate:
    """K2 restricted to ordered type pairs, e.g. ``("min", "min")``.

    Types come from the exact b_i, c_i at radius r.  Methods:

    ``"line"``
        Exact integration along one direction through both trace
        hyperplanes, Monte Carlo over the rest.
    ``"importance"``
        Adaptive angular-Gaussian importance sampling.  Needed for a
        maximum next to a minimum in the random wave model, where the
        value drops below 1e-30 well before r = 1.
    ``"conditional"``
        Sequential truncated-conditional sampling; an independent check
        on ``"importance"`` at moderate r.
    ``"sphere"``
        The plain S^5 rule with an indicator.
    ``"auto"`` (default)
        ``"importance"`` for a maximum paired with a minimum, ``"line"``
        otherwise.
    """
    pair = _check_pair(pair)
    quad = quad or SphereQuadrature()
    if method == "auto":
        method = "importance" if set(pair) == {"min", "max"} else "line"
    return _k2_estimate(kernel, r, quad, pair, method, rtol, coeffs)


def second_factorial_moment(
    kernel: RadialKernel,
    radius: float,
    quad: SphereQuadrature | None = None,
    nodes: int = 12,
    method: str = "sphere",
    coeffs: TaylorCoeffs | None = None,
) -> tuple[float, float]:
    """E[N(N-1)] for N the number of critical points in a disc of given radius.

    Uses int int K2(|x - y|) dx dy = int_0^{2R} 2 pi rho K2(rho) I_R(rho) d rho
    with I_R the area of intersection of two discs of radius R at distance
    rho, integrated by Gauss-Legendre in the angle phi = arccos(rho / 2R).  Errors of the nodes are combined as if independent (an upper bound
    under the shared quadrature seed).
    """
    quad = quad or SphereQuadrature()
    if coeffs is None:
        coeffs = taylor_coeffs(kernel, probe=False)
    # rho = 2R cos(phi) makes the lens area analytic on the whole range
    x, w = np.polynomial.legendre.leggauss(nodes)
    phi = math.pi / 4 * (x + 1)
    w = w * math.pi / 4
    rho = 2 * radius * np.cos(phi)
    lens = 2 * radius**2 * (phi - np.sin(phi) * np.cos(phi))
    weight = w * 2 * radius * np.sin(phi) * 2 * math.pi * rho * lens
    vals, errs = [], []
    for r in rho:
        est = _k2_estimate(kernel, float(r), quad, None, method, None, coeffs)
        vals.append(est.value)
        errs.append(est.std_error)
    vals, errs = np.array(vals), np.array(errs)
    return float(weight @ vals), float(np.abs(weight) @ errs)


# ---------------------------------------------------------------------------
# decay exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    std_error: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int


def decay_exponent_fit(r: Sequence[float], values: Sequence[float], errors: Iterable[float] | None = None) -> ExponentFit:
    """Weighted least squares slope of log(value) against log(r)."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size < 4:
        raise ValueError("need at least four points for an exponent fit")
    if np.any(v <= 0) or np.any(r <= 0):
        raise NonPositiveValue("decay_exponent_fit needs strictly positive r and values")
    x, y = np.log(r), np.log(v)
    X = np.column_stack([np.ones_like(x), x])
    if errors is None:
        wts = np.ones_like(x)
    else:
        e = np.asarray(list(errors), dtype=float)
        sig = np.where(e > 0, e / v, np.nan)
        floor = np.nanmin(sig) if np.any(np.isfinite(sig)) else 1.0
        sig = np.where(np.isfinite(sig), sig, floor)
        wts = 1.0 / sig**2
    W = X * wts[:, None]
    beta = np.linalg.solve(X.T @ W, W.T @ y)
    resid = y - X @ beta
    dof = max(r.size - 2, 1)
    if errors is None:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
    else:
        chi2 = float(np.sum(wts * resid**2)) / dof
        cov = np.linalg.inv(X.T @ W) * max(chi2, 1.0)
    se = math.sqrt(max(cov[1, 1], 0.0))
    return ExponentFit(float(beta[1]), se, float(beta[0]), beta[1] - 1.96 * se, beta[1] + 1.96 * se, int(r.size))
