"""Joint covariance of gradients and Hessians at two points, and its conditioning.

The two points are ``x = (0, 0)`` and ``y = (0, r)``.  The ten-dimensional
vector is ordered as ``(grad F(x), grad F(y), H(x), H(y))`` with Hessians
vectorized as ``(F_11, F_12, F_22)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np

from .covariance import RadialKernel, TaylorCoeffs, taylor_coeffs
from .exceptions import (
    DegenerateGradientPair,
    EigenvectorDegeneracy,
    NonPositiveEigenvalue,
    RadiusTooLarge,
    RadiusTooSmall,
)

__all__ = [
    "R_MIN",
    "R_MAX",
    "BlockCovariance",
    "ConditionalCovariance",
    "EigenSystem",
    "sigma_blocks",
    "series_blocks",
    "radial_entries",
    "assemble_sigma",
    "det_A",
    "conditional_delta",
    "schur_complement",
    "eigen_system",
    "whitening",
    "diagnostics_row",
    "delta_highprec",
    "DIAGNOSTIC_COLUMNS",
]

R_MIN = 1e-3
R_MAX = 25.0
ENTRY_NAMES = ("alpha1", "alpha2", "beta1", "beta2", "gamma1", "gamma2", "gamma3")


def _hessian_cov(g4: float) -> np.ndarray:
    return g4 * np.array([[24.0, 0.0, 8.0], [0.0, 8.0, 0.0], [8.0, 0.0, 24.0]])


@dataclass(frozen=True)
class BlockCovariance:
    """Structured form of the 10x10 covariance Sigma(r)."""

    r: float
    g4: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    gamma3: float
    series: bool = False

    @property
    def entries(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in ENTRY_NAMES)

    def gradient_block(self) -> np.ndarray:
        ar = np.diag([self.alpha1, self.alpha2])
        two = 2.0 * np.eye(2)
        return np.block([[two, ar], [ar, two]])

    def cross_block(self) -> np.ndarray:
        b = np.array([[0.0, self.beta1, 0.0], [self.beta1, 0.0, self.beta2]])
        z = np.zeros((2, 3))
        return np.block([[z, b], [-b, z]])

    def hessian_block(self) -> np.ndarray:
        c0 = _hessian_cov(self.g4)
        cr = np.array(
            [[self.gamma1, 0.0, self.gamma2], [0.0, self.gamma2, 0.0], [self.gamma2, 0.0, self.gamma3]]
        )
        return np.block([[c0, cr], [cr, c0]])

    def assemble(self) -> np.ndarray:
        b = self.cross_block()
        return np.block([[self.gradient_block(), b], [b.T, self.hessian_block()]])

    def replace(self, **changes) -> "BlockCovariance":
        values = {n: getattr(self, n) for n in ("r", "g4", *ENTRY_NAMES, "series")}
        values.update(changes)
        return BlockCovariance(**values)


def _entries_from_t(hd, r):
    t = r * r
    return (
        -2 * hd[1],
        -2 * hd[1] - 4 * t * hd[2],
        -4 * r * hd[2],
        -12 * r * hd[2] - 8 * r * t * hd[3],
        12 * hd[2],
        4 * hd[2] + 8 * t * hd[3],
        12 * hd[2] + 48 * t * hd[3] + 16 * t * t * hd[4],
    )


def radial_entries(d1, d2, d3, d4, r):
    """alpha, beta, gamma from the radial derivatives C', C'', C''', C'''' at r > 0."""
    return (
        -d1 / r,
        -d2,
        -(d2 - d1 / r) / r,
        -d3,
        3 * (d2 - d1 / r) / r**2,
        d3 / r - 2 * d2 / r**2 + 2 * d1 / r**3,
        d4,
    )


def exact_entries(kernel: RadialKernel, r):
    """Exact alpha1..gamma3 at separation r (mpmath numbers are passed through)."""
    if kernel.has_tderiv:
        t = r * r
        return _entries_from_t([kernel.tderiv(t, n) for n in range(5)], r)
    return radial_entries(*(kernel.deriv(r, k) for k in range(1, 5)), r)


def series_entries(coeffs: TaylorCoeffs, r):
    """Small-r expansions of alpha1..gamma3 in the normalized coefficients."""
    g4, g6, g8 = coeffs.g4, coeffs.g6, coeffs.g8
    r2, r4 = r * r, r**4
    return (
        2 - 4 * g4 * r2 + 6 * g6 * r4,
        2 - 12 * g4 * r2 + 30 * g6 * r4,
        -8 * g4 * r + 24 * g6 * r**3,
        -24 * g4 * r + 120 * g6 * r**3,
        24 * g4 - 72 * g6 * r2 + 144 * g8 * r4,
        8 * g4 - 72 * g6 * r2 + 240 * g8 * r4,
        24 * g4 - 360 * g6 * r2 + 1680 * g8 * r4,
    )


def _check_psd(blocks: BlockCovariance) -> None:
    sigma = blocks.assemble()
    lo = np.linalg.eigvalsh(sigma)[0]
    if lo < -1e-9 * max(1.0, abs(sigma).max()):
        raise RadiusTooLarge(f"Sigma(r={blocks.r}) is not positive semidefinite (min eig {lo:.3e})")


def sigma_blocks(
    kernel: RadialKernel,
    r: float,
    coeffs: TaylorCoeffs | None = None,
    check_psd: bool = True,
) -> BlockCovariance:
    """Exact blocks of Sigma(r) for a normalized kernel."""
    if r < R_MIN:
        raise RadiusTooSmall(f"r = {r} < r_min = {R_MIN}; use series_blocks for diagnostics")
    if r > R_MAX:
        raise RadiusTooLarge(f"r = {r} > r_max = {R_MAX}")
    if coeffs is None:
        coeffs = taylor_coeffs(kernel, probe=False)
    blocks = BlockCovariance(float(r), coeffs.g4, *(float(e) for e in exact_entries(kernel, r)))
    if check_psd:
        _check_psd(blocks)
    return blocks


def series_blocks(coeffs: TaylorCoeffs, r: float) -> BlockCovariance:
    """Blocks from the truncated small-r series (diagnostic mode, any r > 0)."""
    return BlockCovariance(float(r), coeffs.g4, *series_entries(coeffs, r), series=True)


def assemble_sigma(kernel: RadialKernel, r: float, g4: float | None = None) -> np.ndarray:
    """10x10 Sigma(r) built from radial derivatives only.

    Independent of the t-derivative route used by ``sigma_blocks``; serves as
    the reference for Schur-complement and fault-injection checks.
    """
    if g4 is None:
        g4 = taylor_coeffs(kernel, probe=False).g4
    entries = radial_entries(*(float(kernel.deriv(r, k)) for k in range(1, 5)), r)
    return BlockCovariance(float(r), g4, *entries).assemble()


def det_A(blocks: BlockCovariance) -> float:
    """Determinant of the gradient block, (4 - alpha1^2)(4 - alpha2^2)."""
    a1, a2 = blocks.alpha1, blocks.alpha2
    d = (2 - a1) * (2 + a1) * (2 - a2) * (2 + a2)
    if not d > 1e-300:
        raise DegenerateGradientPair(f"det A(r={blocks.r}) = {d!r}")
    return d


@dataclass(frozen=True)
class ConditionalCovariance:
    """Covariance of (H(x), H(y)) given grad F(x) = grad F(y) = 0."""

    r: float
    g4: float
    a: tuple[float, ...]

    @property
    def delta1(self) -> np.ndarray:
        a1, a2, a3, a4 = self.a[:4]
        c = 64 * self.g4 / 3
        return np.array([[c + a1, 0.0, a4], [0.0, a2, 0.0], [a4, 0.0, a3]])

    @property
    def delta2(self) -> np.ndarray:
        a5, a6, a7, a8 = self.a[4:]
        c = 64 * self.g4 / 3
        return np.array([[c + a5, 0.0, a8], [0.0, a6, 0.0], [a8, 0.0, a7]])

    def matrix(self) -> np.ndarray:
        d1, d2 = self.delta1, self.delta2
        return np.block([[d1, d2], [d2, d1]])

    def combinations(self) -> dict[str, tuple[float, float]]:
        """(A_i^+, A_i^-) for i = 1..4."""
        a1, a2, a3, a4, a5, a6, a7, a8 = self.a
        return {
            "A1": (a1 + a5 + 128 * self.g4 / 3, a1 - a5),
            "A2": (a2 + a6, a2 - a6),
            "A3": (a3 + a7, a3 - a7),
            "A4": (a4 + a8, a4 - a8),
        }


def conditional_delta(blocks: BlockCovariance, exact: bool = False) -> ConditionalCovariance:
    """Closed-form entries a1..a8 of Delta(r) = C - B^t A^-1 B.

    With ``exact=True`` the entries keep the type of the block entries
    (e.g. mpmath numbers) instead of being rounded to float.
    """
    if not exact:
        det_A(blocks)
    al1, al2 = blocks.alpha1, blocks.alpha2
    b1, b2 = blocks.beta1, blocks.beta2
    g1, g2, g3 = blocks.gamma1, blocks.gamma2, blocks.gamma3
    g4 = blocks.g4
    d1 = (2 - al1) * (2 + al1)
    d2 = (2 - al2) * (2 + al2)
    a = (
        -2 * b1 * b1 / d2 + 8 * g4 / 3,
        -2 * b1 * b1 / d1 + 8 * g4,
        -2 * b2 * b2 / d2 + 24 * g4,
        -2 * b1 * b2 / d2 + 8 * g4,
        g1 - al2 * b1 * b1 / d2 - 64 * g4 / 3,
        g2 - al1 * b1 * b1 / d1,
        g3 - al2 * b2 * b2 / d2,
        g2 - al2 * b1 * b2 / d2,
    )
    if exact:
        return ConditionalCovariance(blocks.r, g4, a)
    return ConditionalCovariance(blocks.r, g4, tuple(float(x) for x in a))


def delta_highprec(kernel: RadialKernel, r: float, g4, dps: int = 40) -> mpmath.matrix:
    """Delta(r) as a 6x6 mpmath matrix computed at ``dps`` digits.

    The near-null directions of Delta (eigenvalues ~ r^10 for the random
    wave model) are lost to cancellation in double precision; this path
    keeps them.
    """
    with mpmath.workdps(dps):
        rr = mpmath.mpf(r)
        g4m = mpmath.mpf(g4)
        blocks = BlockCovariance(rr, g4m, *exact_entries(kernel, rr))
        a1, a2, a3, a4, a5, a6, a7, a8 = conditional_delta(blocks, exact=True).a
        c = 64 * g4m / 3
        d1 = [[c + a1, 0, a4], [0, a2, 0], [a4, 0, a3]]
        d2 = [[c + a5, 0, a8], [0, a6, 0], [a8, 0, a7]]
        rows = [d1[i] + d2[i] for i in range(3)] + [d2[i] + d1[i] for i in range(3)]
        return mpmath.matrix(rows)


def schur_complement(sigma: np.ndarray) -> np.ndarray:
    """Generic C - B^t A^-1 B for the 4 + 6 partition."""
    a, b, c = sigma[:4, :4], sigma[:4, 4:], sigma[4:, 4:]
    out = c - b.T @ np.linalg.solve(a, b)
    return (out + out.T) / 2


@dataclass(frozen=True)
class EigenSystem:
    r: float
    lambdas: np.ndarray
    Q: np.ndarray
    fallback: bool = False

    def reconstruct(self) -> np.ndarray:
        return (self.Q * self.lambdas) @ self.Q.T


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-14 * np.abs(v).max())
    return -v if v[nz[0]] < 0 else v


def _closed_form_eigenvalues(comb) -> np.ndarray:
    A1p, A1m = comb["A1"]
    A2p, A2m = comb["A2"]
    A3p, A3m = comb["A3"]
    A4p, A4m = comb["A4"]
    dm = math.hypot(A1m - A3m, 2 * A4m)
    dp = math.hypot(A1p - A3p, 2 * A4p)
    return np.array(
        [
            A2m,
            A2p,
            (A1m + A3m - dm) / 2,
            (A1m + A3m + dm) / 2,
            (A1p + A3p - dp) / 2,
            (A1p + A3p + dp) / 2,
        ]
    )


def eigen_system(delta: ConditionalCovariance, denominator_tol: float = 1e-14) -> EigenSystem:
    """Eigenvalues and orthonormal eigenvectors of Delta(r) in closed form.

    Columns of ``Q`` follow the fixed order lambda_1..lambda_6, each
    normalized with its first nonzero component positive.  When an
    eigenvector denominator A_4^+ or A_4^- is below ``denominator_tol`` a
    generic symmetric eigensolve replaces the closed form and the result is
    flagged.
    """
    comb = delta.combinations()
    lam = _closed_form_eigenvalues(comb)
    A1p, A1m = comb["A1"]
    A3p, A3m = comb["A3"]
    A4p, A4m = comb["A4"]
    if abs(A4m) <= denominator_tol or abs(A4p) <= denominator_tol:
        warnings.warn(
            f"eigenvector denominators underflow at r={delta.r}; using eigh",
            EigenvectorDegeneracy,
            stacklevel=2,
        )
        return _eigh_fallback(delta, lam)
    dm = math.hypot(A3m - A1m, 2 * A4m)
    dp = math.hypot(A3p - A1p, 2 * A4p)
    v31 = (A3m - A1m + dm) / (2 * A4m)
    v41 = (A3m - A1m - dm) / (2 * A4m)
    v51 = (A3p - A1p + dp) / (2 * A4p)
    v61 = (A3p - A1p - dp) / (2 * A4p)
    vecs = [
        (0, -1, 0, 0, 1, 0),
        (0, 1, 0, 0, 1, 0),
        (v31, 0, -1, -v31, 0, 1),
        (v41, 0, -1, -v41, 0, 1),
        (-v51, 0, 1, -v51, 0, 1),
        (-v61, 0, 1, -v61, 0, 1),
    ]
    cols = []
    for v in vecs:
        v = np.asarray(v, dtype=float)
        cols.append(_canonical_sign(v / np.linalg.norm(v)))
    return EigenSystem(delta.r, lam, np.column_stack(cols))


def _eigh_fallback(delta: ConditionalCovariance, lam_closed: np.ndarray) -> EigenSystem:
    w, v = np.linalg.eigh(delta.matrix())
    order = np.empty(6, dtype=int)
    order[np.argsort(lam_closed, kind="stable")] = np.arange(6)
    q = np.column_stack([_canonical_sign(v[:, i]) for i in order])
    return EigenSystem(delta.r, w[order], q, fallback=True)


def whitening(eigen: EigenSystem, rel_floor: float = 1e-12) -> np.ndarray:
    """Matrix ``M = Q Lambda^{1/2}`` with ``M M^t = Delta``; zeta = M xi.

    Eigenvalues within ``rel_floor * max(lambda)`` of zero are treated as
    round-off and clipped to 0.  For the random wave model the smallest
    eigenvalue decays like r^10 and is routinely computed slightly negative.
    """
    lam = np.asarray(eigen.lambdas, dtype=float)
    floor = rel_floor * max(float(lam.max()), 0.0)
    if lam.max() <= 0 or np.any(lam < -floor):
        raise NonPositiveEigenvalue(f"Delta(r={eigen.r}) eigenvalues {lam}")
    return eigen.Q * np.sqrt(np.clip(lam, 0.0, None))


DIAGNOSTIC_COLUMNS = (
    ("r",)
    + ENTRY_NAMES
    + tuple(f"a{i}" for i in range(1, 9))
    + tuple(f"lambda{i}" for i in range(1, 7))
)


def diagnostics_row(kernel: RadialKernel, r: float, coeffs: TaylorCoeffs | None = None) -> dict:
    blocks = sigma_blocks(kernel, r, coeffs)
    delta = conditional_delta(blocks)
    lam = _closed_form_eigenvalues(delta.combinations())
    values = (r, *blocks.entries, *delta.a, *lam)
    return dict(zip(DIAGNOSTIC_COLUMNS, (float(v) for v in values)))
