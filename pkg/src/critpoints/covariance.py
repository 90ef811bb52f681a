"""Radial covariance kernels, Taylor coefficients and admissibility checks.

Every kernel ``C(r)`` is even and has unit variance.  Besides the usual
radial derivatives ``C^{(k)}(r)`` the catalog kernels expose derivatives of
``h(t) = C(sqrt(t))`` with respect to ``t = r**2``.  The covariance entries
of gradients and Hessians are polynomial in those, which avoids the
``1/r**3`` cancellations of the radial formulas at small separations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from numpy.polynomial import hermite
from scipy import special

from .exceptions import (
    CoefficientWarning,
    DegenerateField,
    InadmissibleCoefficients,
    ModelSpecError,
    NegativeCoefficient,
    NonSmoothKernel,
)

__all__ = [
    "RadialKernel",
    "BesselKernel",
    "GaussianKernel",
    "MixtureKernel",
    "PolynomialKernel",
    "ConstantKernel",
    "ScaledKernel",
    "CallableKernel",
    "TaylorCoeffs",
    "AdmissibilityReport",
    "taylor_coeffs",
    "normalize",
    "check_admissibility",
    "rwm",
    "bargmann_fock",
    "mixture",
    "parse_model",
    "CATALOG",
    "finite_difference",
]

NORMALIZED_TOL = 1e-12
PROBE_RADII = (0.1, 0.5, 1.0)


def _is_mp(x) -> bool:
    return isinstance(x, mpmath.mpf)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

_FD_HALF_WIDTH = {1: 4, 2: 4, 3: 5, 4: 5}
_FD_STEP = {1: 0.02, 2: 0.04, 3: 0.08, 4: 0.1}


@lru_cache(maxsize=None)
def _central_weights(k: int, m: int) -> tuple[float, ...]:
    offsets = np.arange(-m, m + 1, dtype=float)
    vander = np.array([offsets**p / math.factorial(p) for p in range(2 * m + 1)])
    rhs = np.zeros(2 * m + 1)
    rhs[k] = 1.0
    return tuple(np.linalg.solve(vander, rhs))


def finite_difference(func: Callable, r: float, k: int, step: float | None = None) -> float:
    """k-th derivative of an even radial function by central differences.

    Uses an eighth order central stencil and one Richardson step (h, h/2).
    ``func`` is only ever called on non-negative arguments.
    """
    if k == 0:
        return float(func(abs(r)))
    m = _FD_HALF_WIDTH[k]
    h = _FD_STEP[k] if step is None else step
    w = np.asarray(_central_weights(k, m))
    offsets = np.arange(-m, m + 1)

    def stencil(hh):
        pts = np.abs(r + offsets * hh)
        vals = np.array([func(p) for p in pts], dtype=float)
        return float(w @ vals) / hh**k

    coarse, fine = stencil(h), stencil(h / 2)
    return (2**8 * fine - coarse) / (2**8 - 1)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _radial_from_t(hd: list, r):
    """Radial derivatives C', C'', C''', C'''' from derivatives of h in t."""
    t = r * r
    return (
        2 * r * hd[1],
        2 * hd[1] + 4 * t * hd[2],
        12 * r * hd[2] + 8 * r * t * hd[3],
        12 * hd[2] + 48 * t * hd[3] + 16 * t * t * hd[4],
    )


class RadialKernel:
    """Base class for unit-variance isotropic covariance functions.

    Subclasses implement ``eval`` and ``deriv``; kernels that know the
    derivatives of ``h(t) = C(sqrt t)`` also implement ``tderiv`` and set
    ``has_tderiv``.  ``scale`` records the spatial rescaling applied so far
    (the kernel equals ``C_original(scale * r)``).
    """

    name: str = "kernel"
    scale: float = 1.0
    has_tderiv: bool = False

    def eval(self, r):
        raise NotImplementedError

    def deriv(self, r, k: int):
        raise NotImplementedError

    def tderiv(self, t, n: int):
        raise NotImplementedError(f"{self.name} has no t-derivatives")

    def taylor(self) -> tuple[float, float, float, float] | None:
        """Exact (g2, g4, g6, g8) when known in closed form."""
        return None

    def rescaled(self, s: float) -> "RadialKernel":
        return ScaledKernel(self, s)

    def __call__(self, r):
        return self.eval(r)


@dataclass(frozen=True)
class BesselKernel(RadialKernel):
    """Monochromatic kernel ``J0(wavenumber * r)``; ``wavenumber=2`` is the RWM with g2 = 1."""

    wavenumber: float = 2.0
    scale: float = 1.0
    name: str = "rwm"
    has_tderiv = True

    def eval(self, r):
        if _is_mp(r):
            return mpmath.besselj(0, self.wavenumber * r)
        return special.j0(self.wavenumber * np.asarray(r, dtype=float))

    def deriv(self, r, k: int):
        kap = self.wavenumber
        if k == 0:
            return self.eval(r)
        if _is_mp(r):
            return kap**k * mpmath.besselj(0, kap * r, derivative=k)
        return kap**k * special.jvp(0, kap * np.asarray(r, dtype=float), k)

    def tderiv(self, t, n: int):
        # h^(n)(t) = (-kappa^2/4)^n * J_n(x) / (x/2)^n with x = kappa sqrt(t)
        kap = self.wavenumber
        if _is_mp(t):
            x = kap * mpmath.sqrt(t)
            ratio = mpmath.besselj(n, x) / (x / 2) ** n if x != 0 else 1 / mpmath.factorial(n)
            return (-(kap**2) / 4) ** n * ratio
        x = kap * math.sqrt(t)
        if x < 1e-4:
            q = x * x / 4
            ratio = sum((-q) ** j / (math.factorial(j) * math.factorial(j + n)) for j in range(4))
        else:
            ratio = special.jv(n, x) / (x / 2) ** n
        return (-(kap**2) / 4) ** n * ratio

    def taylor(self):
        q = self.wavenumber**2 / 4
        return tuple(q**k / math.factorial(k) ** 2 for k in range(1, 5))

    def rescaled(self, s: float):
        return BesselKernel(self.wavenumber * s, self.scale * s, self.name)


@dataclass(frozen=True)
class GaussianKernel(RadialKernel):
    """Gaussian kernel ``exp(-rate * r**2)``; ``rate=1`` is Bargmann-Fock with g2 = 1."""

    rate: float = 1.0
    scale: float = 1.0
    name: str = "bf"
    has_tderiv = True

    def eval(self, r):
        if _is_mp(r):
            return mpmath.exp(-self.rate * r * r)
        r = np.asarray(r, dtype=float)
        return np.exp(-self.rate * r * r)

    def deriv(self, r, k: int):
        # d^k/dr^k exp(-a r^2) = (-sqrt a)^k H_k(sqrt(a) r) exp(-a r^2)
        a = self.rate
        if _is_mp(r):
            sa = mpmath.sqrt(a)
            return (-sa) ** k * mpmath.hermite(k, sa * r) * mpmath.exp(-a * r * r)
        r = np.asarray(r, dtype=float)
        sa = math.sqrt(a)
        coef = [0] * k + [1]
        return (-sa) ** k * hermite.hermval(sa * r, coef) * np.exp(-a * r * r)

    def tderiv(self, t, n: int):
        a = self.rate
        if _is_mp(t):
            return (-a) ** n * mpmath.exp(-a * t)
        return (-a) ** n * math.exp(-a * t)

    def taylor(self):
        a = self.rate
        return tuple(a**k / math.factorial(k) for k in range(1, 5))

    def rescaled(self, s: float):
        return GaussianKernel(self.rate * s * s, self.scale * s, self.name)


@dataclass(frozen=True)
class MixtureKernel(RadialKernel):
    """Convex combination ``weight * first + (1 - weight) * second``."""

    weight: float = 0.5
    first: RadialKernel = field(default_factory=BesselKernel)
    second: RadialKernel = field(default_factory=GaussianKernel)
    scale: float = 1.0
    name: str = "mix"

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {self.weight}")

    @property
    def has_tderiv(self):
        return self.first.has_tderiv and self.second.has_tderiv

    def _combine(self, x, y):
        w = self.weight
        return w * x + (1 - w) * y

    def eval(self, r):
        return self._combine(self.first.eval(r), self.second.eval(r))

    def deriv(self, r, k: int):
        return self._combine(self.first.deriv(r, k), self.second.deriv(r, k))

    def tderiv(self, t, n: int):
        return self._combine(self.first.tderiv(t, n), self.second.tderiv(t, n))

    def taylor(self):
        a, b = self.first.taylor(), self.second.taylor()
        if a is None or b is None:
            return None
        return tuple(self._combine(x, y) for x, y in zip(a, b))

    def rescaled(self, s: float):
        return MixtureKernel(
            self.weight, self.first.rescaled(s), self.second.rescaled(s), self.scale * s, self.name
        )


@dataclass(frozen=True)
class PolynomialKernel(RadialKernel):
    """Even polynomial ``1 - g2 r^2 + g4 r^4 - g6 r^6 + g8 r^8``.

    Only meaningful near ``r = 0``; no positive-definiteness is implied.
    """

    g4: float = 0.25
    g6: float = 1 / 36
    g8: float = 1 / 576
    g2: float = 1.0
    scale: float = 1.0
    name: str = "poly"
    has_tderiv = True

    def _h_coeffs(self):
        return (1.0, -self.g2, self.g4, -self.g6, self.g8)

    def eval(self, r):
        return self.tderiv(r * r, 0)

    def deriv(self, r, k: int):
        if k == 0:
            return self.eval(r)
        return _radial_from_t([self.tderiv(r * r, n) for n in range(5)], r)[k - 1]

    def tderiv(self, t, n: int):
        c = self._h_coeffs()
        total = 0
        for j in range(n, 5):
            total = total + c[j] * math.perm(j, n) * t ** (j - n)
        return total

    def taylor(self):
        return (self.g2, self.g4, self.g6, self.g8)

    def rescaled(self, s: float):
        q = s * s
        return PolynomialKernel(
            self.g4 * q**2, self.g6 * q**3, self.g8 * q**4, self.g2 * q, self.scale * s, self.name
        )


@dataclass(frozen=True)
class ConstantKernel(RadialKernel):
    """``C(r) = 1``: the almost surely constant field."""

    scale: float = 1.0
    name: str = "constant"
    has_tderiv = True

    def eval(self, r):
        if _is_mp(r):
            return mpmath.mpf(1)
        return np.ones_like(np.asarray(r, dtype=float))

    def deriv(self, r, k: int):
        return self.eval(r) if k == 0 else 0.0 * self.eval(r)

    def tderiv(self, t, n: int):
        return 1.0 if n == 0 else 0.0

    def taylor(self):
        return (0.0, 0.0, 0.0, 0.0)

    def rescaled(self, s: float):
        return self


@dataclass(frozen=True)
class ScaledKernel(RadialKernel):
    """``base(s * r)``; generic rescaling for kernels without a closed rescale."""

    base: RadialKernel = field(default_factory=ConstantKernel)
    s: float = 1.0

    @property
    def name(self):
        return f"{self.base.name}*{self.s:g}"

    @property
    def scale(self):
        return self.base.scale * self.s

    @property
    def has_tderiv(self):
        return self.base.has_tderiv

    def eval(self, r):
        return self.base.eval(self.s * r)

    def deriv(self, r, k: int):
        return self.s**k * self.base.deriv(self.s * r, k)

    def tderiv(self, t, n: int):
        q = self.s * self.s
        return q**n * self.base.tderiv(q * t, n)

    def taylor(self):
        g = self.base.taylor()
        if g is None:
            return None
        return tuple(gk * self.s ** (2 * k) for k, gk in enumerate(g, start=1))

    def rescaled(self, s: float):
        return ScaledKernel(self.base, self.s * s)


class CallableKernel(RadialKernel):
    """User kernel given only by its values; derivatives are numerical."""

    def __init__(self, func: Callable[[float], float], name: str = "user", scale: float = 1.0):
        self.func = func
        self.name = name
        self.scale = scale

    def eval(self, r):
        return np.vectorize(lambda x: float(self.func(abs(x))))(np.asarray(r, dtype=float))

    def deriv(self, r, k: int):
        f = lambda x: float(self.func(x))  # noqa: E731
        if np.ndim(r) == 0:
            return finite_difference(f, float(r), k)
        return np.array([finite_difference(f, float(x), k) for x in np.ravel(r)]).reshape(np.shape(r))

    def numeric_taylor(self) -> tuple[float, float, float, float]:
        # least squares in t = r^2 on a short interval; g6 and g8 are rough
        t = np.linspace(0.0, 0.36, 200)
        vals = np.array([float(self.func(math.sqrt(x))) for x in t])
        poly = np.polynomial.Polynomial.fit(t, vals, 9).convert().coef
        return (-poly[1], poly[2], -poly[3], poly[4])

    def __repr__(self):
        return f"CallableKernel(name={self.name!r}, scale={self.scale})"


def rwm() -> BesselKernel:
    """Random wave model stored with g2 = 1, i.e. ``J0(2r)``."""
    return BesselKernel(2.0, 1.0, "rwm")


def bargmann_fock() -> GaussianKernel:
    return GaussianKernel(1.0, 1.0, "bf")


def mixture(w: float) -> MixtureKernel:
    return MixtureKernel(w, rwm(), bargmann_fock(), 1.0, f"mix:{w:g}")


CATALOG: dict[str, Callable[[], RadialKernel]] = {
    "rwm": rwm,
    "bf": bargmann_fock,
    "mix:0.5": lambda: mixture(0.5),
}


def parse_model(model: str) -> RadialKernel:
    """Parse ``rwm``, ``bf``, ``mix:<w>`` or ``poly:g4,g6,g8``."""
    text = model.strip().lower()
    if text in ("rwm",):
        return rwm()
    if text in ("bf", "bargmann_fock", "bargmann-fock"):
        return bargmann_fock()
    head, _, tail = text.partition(":")
    try:
        if head == "mix":
            w = float(tail)
            if not 0.0 <= w <= 1.0:
                raise ModelSpecError(f"mixture weight must be in [0, 1]: {model!r}")
            return mixture(w)
        if head == "poly":
            parts = [float(p) for p in tail.split(",")]
            if len(parts) != 3:
                raise ModelSpecError(f"poly needs three coefficients g4,g6,g8: {model!r}")
            return PolynomialKernel(*parts, name=f"poly:{tail}")
    except ValueError as exc:
        if isinstance(exc, ModelSpecError):
            raise
        raise ModelSpecError(f"bad number in model {model!r}") from exc
    raise ModelSpecError(f"unknown model {model!r}; expected rwm, bf, mix:<w> or poly:g4,g6,g8")


# ---------------------------------------------------------------------------
# Taylor coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorCoeffs:
    g2: float
    g4: float
    g6: float
    g8: float
    normalized: bool
    degenerate: bool = False
    exact: bool = True

    def as_tuple(self):
        return (self.g2, self.g4, self.g6, self.g8)


def _probe_derivatives(kernel: RadialKernel, rtol: float = 1e-6) -> None:
    for r in PROBE_RADII:
        for k in range(1, 5):
            analytic = float(kernel.deriv(r, k))
            numeric = finite_difference(lambda x: float(kernel.eval(x)), r, k)
            if abs(analytic - numeric) > rtol * max(abs(analytic), 1e-2):
                raise NonSmoothKernel(
                    f"{kernel.name}: derivative {k} at r={r} is {analytic!r}, "
                    f"finite differences give {numeric!r}"
                )


def taylor_coeffs(kernel: RadialKernel, probe: bool = True) -> TaylorCoeffs:
    """Return ``g_2k = (-1)^k C^(2k)(0) / (2k)!`` for k = 1..4.

    Exact values are used when the kernel supplies them; otherwise they are
    fitted from kernel values and flagged ``exact=False``.
    """
    if probe and not isinstance(kernel, CallableKernel):
        _probe_derivatives(kernel)
    g = kernel.taylor()
    exact = g is not None
    if g is None:
        g = kernel.numeric_taylor()
    g = tuple(float(x) for x in g)
    for k, gk in enumerate(g, start=1):
        if gk < -1e-12:
            raise NegativeCoefficient(f"g{2 * k} = {gk!r} < 0 for {kernel.name}")
    g2, g4, g6, g8 = (max(x, 0.0) for x in g)
    slack = 2.5 * g2 * g6 - g4 * g4
    degenerate = g2 == 0.0 or slack <= NORMALIZED_TOL * max(1.0, g4 * g4)
    return TaylorCoeffs(g2, g4, g6, g8, abs(g2 - 1.0) <= NORMALIZED_TOL, degenerate, exact)


def normalize(kernel: RadialKernel) -> RadialKernel:
    """Rescale space so that g2 = 1; the factor is accumulated in ``scale``."""
    g2 = taylor_coeffs(kernel, probe=False).g2
    if g2 <= 0.0:
        raise DegenerateField(f"{kernel.name} has g2 = 0: the field is a.s. constant")
    if abs(g2 - 1.0) <= NORMALIZED_TOL:
        return kernel
    return kernel.rescaled(1.0 / math.sqrt(g2))


@dataclass(frozen=True)
class AdmissibilityReport:
    slack: float
    degenerate: bool
    warn_b_sign: bool
    warn_g8: bool
    b_sign_value: float
    g8_value: float

    @property
    def warnings(self) -> list[str]:
        out = []
        if self.degenerate:
            out.append("degenerate")
        if self.warn_b_sign:
            out.append("warn_b_sign")
        if self.warn_g8:
            out.append("warn_g8")
        return out


def check_admissibility(coeffs: TaylorCoeffs, emit: bool = False) -> AdmissibilityReport:
    """Cauchy-Schwarz slack ``(5/2) g6 - g4^2`` plus the sign diagnostics.

    Raises ``InadmissibleCoefficients`` when the slack is below -1e-12.
    With ``emit=True`` the flags are also issued as ``CoefficientWarning``.
    """
    if not coeffs.normalized:
        raise ValueError("check_admissibility expects normalized coefficients (g2 = 1)")
    g4, g6, g8 = coeffs.g4, coeffs.g6, coeffs.g8
    slack = 2.5 * g6 - g4 * g4
    if slack < -1e-12:
        raise InadmissibleCoefficients(
            f"g4^2 = {g4 * g4!r} exceeds (5/2) g6 = {2.5 * g6!r}; no such field exists"
        )
    b_sign = 2 * g4 * g4 - 3 * g6
    g8_value = 280 * g4 * g8 - 153 * g6 * g6
    report = AdmissibilityReport(
        slack=slack,
        degenerate=slack <= NORMALIZED_TOL * max(1.0, g4 * g4),
        warn_b_sign=abs(b_sign) <= 1e-10,
        warn_g8=g8_value < 0,
        b_sign_value=b_sign,
        g8_value=g8_value,
    )
    if emit:
        for flag in report.warnings:
            warnings.warn(f"{flag}: g4={g4!r}, g6={g6!r}, g8={g8!r}", CoefficientWarning, stacklevel=2)
    return report
