"""Spectral simulation of isotropic Gaussian fields on a flat torus.

A field on the torus [0, L)^2 is the finite trigonometric sum

    F(x) = a0 sqrt(w0) + sum_k sqrt(2 w_k) (A_k cos(k.x) + B_k sin(k.x)),

over half of the dual lattice (2 pi / L) Z^2, with A_k, B_k, a0 independent
standard normals and weights w_k summing to one.  Its covariance is
sum_k w_k cos(k.d), the lattice discretization of the spectral measure.
Gradients and Hessians are exact derivatives of the sum, so Newton's
method converges to machine precision.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .covariance import (
    BesselKernel,
    GaussianKernel,
    MixtureKernel,
    RadialKernel,
    ScaledKernel,
    parse_model,
)
from .exceptions import DegenerateHessian, EmptyBin, ModeBudgetTooSmall, ModelSpecError
from .quadrature import default_threads

__all__ = [
    "SpectralSampler",
    "FieldSample",
    "debug_field",
    "CriticalPoint",
    "PointSet",
    "TYPE_NAMES",
    "find_critical_points",
    "classify",
    "PairHistogram",
    "empirical_pair_correlation",
    "simulate_poisson",
    "empirical_covariance",
    "simulate",
]

log = logging.getLogger(__name__)

TYPE_NAMES = ("min", "max", "saddle")
_TYPE_CODE = {name: i for i, name in enumerate(TYPE_NAMES)}
DEFAULT_SPACING = 0.05
NEWTON_TOL = 1e-10
DEGENERATE_DET = 1e-10


# ---------------------------------------------------------------------------
# spectral weights
# ---------------------------------------------------------------------------


def _lattice(L: float, kmax: float) -> np.ndarray:
    """Half-plane lattice vectors 0 < |k| <= kmax: m > 0, or m = 0 and n > 0."""
    dk = 2 * math.pi / L
    m_max = int(math.floor(kmax / dk)) + 1
    m, n = np.meshgrid(np.arange(0, m_max + 1), np.arange(-m_max, m_max + 1), indexing="ij")
    m, n = m.ravel(), n.ravel()
    half = (m > 0) | ((m == 0) & (n > 0))
    k = dk * np.column_stack([m[half], n[half]]).astype(float)
    return k[np.hypot(k[:, 0], k[:, 1]) <= kmax]


def _gaussian_weights(kernel: GaussianKernel, L: float, tol: float):
    """Lattice weights of exp(-a r^2); S(k) = exp(-|k|^2 / 4a) / (4 pi a)."""
    a = kernel.rate
    # radial tail of the spectral law: P(|k| > K) = exp(-K^2 / 4a)
    kmax = math.sqrt(4 * a * math.log(1.0 / (0.01 * tol)))
    k = _lattice(L, kmax)
    dk2 = (2 * math.pi / L) ** 2
    s = lambda kk: np.exp(-np.sum(kk * kk, axis=-1) / (4 * a)) / (4 * math.pi * a) * dk2  # noqa: E731
    return k, 2 * s(k), float(s(np.zeros(2)))


def _ring_weights(kernel: BesselKernel, L: float):
    """Lattice vectors within half a lattice step of the circle |k| = kappa."""
    kappa = kernel.wavenumber
    dk = 2 * math.pi / L
    k = _lattice(L, kappa + dk)
    rad = np.hypot(k[:, 0], k[:, 1])
    k = k[np.abs(rad - kappa) <= dk / 2]
    if len(k) == 0:
        raise ModeBudgetTooSmall(f"no lattice vectors near |k| = {kappa} on a torus of side {L}")
    return k, np.full(len(k), 1.0 / len(k)), 0.0


def _rescale_spectral(kernel: RadialKernel, s: float) -> RadialKernel:
    if isinstance(kernel, MixtureKernel):
        return MixtureKernel(kernel.weight, _rescale_spectral(kernel.first, s),
                             _rescale_spectral(kernel.second, s), kernel.scale * s, kernel.name)
    if isinstance(kernel, ScaledKernel):
        return _rescale_spectral(kernel.base, kernel.s * s)
    return kernel.rescaled(s)


def _spectral_weights(kernel: RadialKernel, L: float, tol: float):
    """(half-plane k, weights of the pair {k, -k}, weight of k = 0)."""
    if isinstance(kernel, GaussianKernel):
        return _gaussian_weights(kernel, L, tol)
    if isinstance(kernel, BesselKernel):
        return _ring_weights(kernel, L)
    if isinstance(kernel, ScaledKernel):
        base = kernel.base
        if isinstance(base, (GaussianKernel, BesselKernel, MixtureKernel, ScaledKernel)):
            return _spectral_weights(_rescale_spectral(base, kernel.s), L, tol)
    if isinstance(kernel, MixtureKernel):
        k1, w1, z1 = _spectral_weights(kernel.first, L, tol)
        k2, w2, z2 = _spectral_weights(kernel.second, L, tol)
        keys = {}
        for kk, ww, scale in ((k1, w1, kernel.weight), (k2, w2, 1 - kernel.weight)):
            for vec, wt in zip(np.round(kk * L / (2 * math.pi)).astype(int), ww):
                key = (int(vec[0]), int(vec[1]))
                keys[key] = keys.get(key, 0.0) + scale * wt
        idx = np.array(sorted(keys), dtype=float).reshape(-1, 2)
        w = np.array([keys[key] for key in sorted(keys)])
        z = kernel.weight * z1 + (1 - kernel.weight) * z2
        return idx * (2 * math.pi / L), w, z
    raise ModelSpecError(f"no spectral representation for kernel {getattr(kernel, 'name', kernel)!r}")


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSample:
    """One realization: half-plane wavevectors, amplitudes and coefficients."""

    K: np.ndarray
    amp: np.ndarray
    a: np.ndarray
    b: np.ndarray
    offset: float
    L: float

    def _exponentials(self, x) -> np.ndarray:
        """exp(i k.x) for every mode, built from per-axis power tables."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.round(self.K * self.L / (2 * math.pi)).astype(int)
        m = int(np.max(np.abs(idx), initial=0))
        powers = np.arange(-m, m + 1)
        theta = (2 * math.pi / self.L) * x
        ex = np.exp(1j * theta[:, :1] * powers)
        ey = np.exp(1j * theta[:, 1:] * powers)
        return ex[:, idx[:, 0] + m] * ey[:, idx[:, 1] + m]

    def value(self, x) -> np.ndarray:
        z = self._exponentials(x)
        return self.offset + np.real(z @ (self.amp * (self.a - 1j * self.b)))

    def derivatives(self, x):
        """(value, gradient (m, 2), Hessian entries (m, 3) as h11, h12, h22)."""
        # F = Re sum_k c_k exp(i k.x) with c_k = amp (A - i B)
        z = self._exponentials(x)
        c = self.amp * (self.a - 1j * self.b)
        kx, ky = self.K[:, 0], self.K[:, 1]
        cols = np.column_stack([c, 1j * kx * c, 1j * ky * c, -kx * kx * c, -kx * ky * c, -ky * ky * c])
        out = np.real(z @ cols)
        return self.offset + out[:, 0], out[:, 1:3], out[:, 3:6]

    def _fft_coefficients(self, n: int) -> np.ndarray:
        idx = np.round(self.K * self.L / (2 * math.pi)).astype(int)
        if np.max(np.abs(idx)) * 2 >= n:
            raise ValueError(f"grid of {n} points aliases wavevectors up to index {np.max(np.abs(idx))}")
        coef = np.zeros((n, n), dtype=complex)
        np.add.at(coef, (idx[:, 0] % n, idx[:, 1] % n), self.amp * (self.a - 1j * self.b))
        return coef

    def grid(self, n: int, derivatives: Sequence[tuple[int, int]] = ((0, 0),)) -> list[np.ndarray]:
        """Field (or partial derivatives) on the n x n grid x_ij = L (i, j) / n."""
        coef = self._fft_coefficients(n)
        freq = np.fft.fftfreq(n, d=1.0 / n) * (2 * math.pi / self.L)
        kx, ky = np.meshgrid(freq, freq, indexing="ij")
        out = []
        for dx, dy in derivatives:
            terms = coef * (1j * kx) ** dx * (1j * ky) ** dy
            vals = np.real(np.fft.ifft2(terms)) * n * n
            if dx == 0 and dy == 0:
                vals = vals + self.offset
            out.append(vals)
        return out


def debug_field(L: float = 2 * math.pi) -> FieldSample:
    """cos(x1) + cos(x2) on the torus of side L (default 2 pi)."""
    dk = 2 * math.pi / L
    K = np.array([[1.0, 0.0], [0.0, 1.0]])
    if abs(round(1 / dk) - 1 / dk) > 1e-12:
        raise ValueError("the debug field needs L to be a multiple of 2 pi")
    return FieldSample(K, np.ones(2), np.ones(2), np.zeros(2), 0.0, L)


@dataclass(frozen=True)
class SpectralSampler:
    """Draws fields with covariance close to a catalog kernel.

    Parameters
    ----------
    model : str or RadialKernel
        Catalog id (``"rwm"``, ``"bf"``, ``"mix:<w>"``) or a kernel built
        from Bessel and Gaussian pieces.
    L : float
        Side of the torus.
    mode_budget : int, optional
        Largest number of half-plane modes allowed.
    seed : int
        Sample ``i`` uses the stream keyed by ``(seed, i)``.
    mass_tol : float
        Largest spectral mass that may be dropped by truncation.
    """

    model: object = "bf"
    L: float = 30.0
    mode_budget: int | None = None
    seed: int = 0
    mass_tol: float = 1e-3
    _modes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("torus side must be positive")
        kernel = parse_model(self.model) if isinstance(self.model, str) else self.model
        k, w, w0 = _spectral_weights(kernel, self.L, self.mass_tol)
        order = np.argsort(-w, kind="stable")
        k, w = k[order], w[order]
        total = w.sum() + w0
        if self.mode_budget is not None and self.mode_budget < len(k):
            dropped = w[self.mode_budget :].sum() / total
            if dropped > self.mass_tol:
                raise ModeBudgetTooSmall(
                    f"{self.mode_budget} modes drop spectral mass {dropped:.3g} > {self.mass_tol}"
                )
            k, w = k[: self.mode_budget], w[: self.mode_budget]
        total = w.sum() + w0
        object.__setattr__(self, "_modes", (kernel, k, w / total, w0 / total))

    @property
    def kernel(self) -> RadialKernel:
        return self._modes[0]

    @property
    def n_modes(self) -> int:
        return len(self._modes[1])

    def covariance(self, r) -> np.ndarray:
        """Covariance of the discretized field along the first axis, averaged over directions."""
        _, k, w, w0 = self._modes
        r = np.atleast_1d(np.asarray(r, dtype=float))
        theta = np.linspace(0, math.pi, 64, endpoint=False)
        d = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        ph = np.einsum("rt,td,kd->rtk", r[:, None] * np.ones_like(theta), d, k)
        return w0 + (np.cos(ph) @ w).mean(axis=1)

    def rng(self, index: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(self.seed), int(index)])))

    def sample(self, index: int = 0) -> FieldSample:
        _, k, w, w0 = self._modes
        rng = self.rng(index)
        a = rng.standard_normal(len(k))
        b = rng.standard_normal(len(k))
        a0 = rng.standard_normal()
        return FieldSample(k, np.sqrt(w), a, b, float(a0 * math.sqrt(w0)), self.L)

    def samples(self, n: int, start: int = 0) -> Iterator[FieldSample]:
        for i in range(start, start + n):
            yield self.sample(i)


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalPoint:
    position: tuple[float, float]
    type: str
    hessian_det: float
    hessian_trace: float
    gradient_residual: float


def classify(hessian) -> str:
    """Type of a critical point from its Hessian (2x2 array or (h11, h12, h22)).

    With b = -trace and c = det: min iff c > 0, b < 0; max iff c > 0, b > 0;
    saddle iff c < 0.
    """
    h = np.asarray(hessian, dtype=float)
    if h.shape == (2, 2):
        h11, h12, h22 = h[0, 0], h[0, 1], h[1, 1]
    else:
        h11, h12, h22 = h
    det = h11 * h22 - h12 * h12
    if abs(det) <= DEGENERATE_DET:
        raise DegenerateHessian(f"|det H| = {abs(det):.3g} <= {DEGENERATE_DET}")
    if det < 0:
        return "saddle"
    return "min" if h11 + h22 > 0 else "max"


def _classify_codes(det, trace):
    codes = np.where(det < 0, _TYPE_CODE["saddle"], np.where(trace > 0, _TYPE_CODE["min"], _TYPE_CODE["max"]))
    return codes.astype(np.int8)


@dataclass
class PointSet:
    """Critical points of one sample, as parallel arrays."""

    positions: np.ndarray
    types: np.ndarray
    hessian_det: np.ndarray
    hessian_trace: np.ndarray
    residual: np.ndarray
    L: float
    sample_id: int = 0
    newton_failures: int = 0

    def __len__(self):
        return len(self.positions)

    def __iter__(self) -> Iterator[CriticalPoint]:
        for i in range(len(self)):
            yield CriticalPoint(
                (float(self.positions[i, 0]), float(self.positions[i, 1])),
                TYPE_NAMES[self.types[i]] if self.types[i] >= 0 else "none",
                float(self.hessian_det[i]),
                float(self.hessian_trace[i]),
                float(self.residual[i]),
            )

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self)
        if kind == "extremum":
            return int(np.count_nonzero((self.types == 0) | (self.types == 1)))
        return int(np.count_nonzero(self.types == _TYPE_CODE[kind]))

    def select(self, kind: str | None) -> np.ndarray:
        if kind is None:
            return self.positions
        if kind == "extremum":
            return self.positions[(self.types == 0) | (self.types == 1)]
        return self.positions[self.types == _TYPE_CODE[kind]]

    @property
    def euler_defect(self) -> int:
        """#min + #max - #saddle; zero on the torus when nothing is missed."""
        return self.count("min") + self.count("max") - self.count("saddle")

    def records(self) -> list[dict]:
        return [
            {
                "sample_id": self.sample_id,
                "x": float(p[0]),
                "y": float(p[1]),
                "type": TYPE_NAMES[t] if t >= 0 else "none",
                "hess_det": float(d),
                "hess_trace": float(tr),
            }
            for p, t, d, tr in zip(self.positions, self.types, self.hessian_det, self.hessian_trace)
        ]


def _candidate_cells(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Cells whose corner signs allow both gradient components to vanish."""

    def changes(g):
        s = g > 0
        corners = [s, np.roll(s, -1, 0), np.roll(s, -1, 1), np.roll(np.roll(s, -1, 0), -1, 1)]
        any_pos = corners[0] | corners[1] | corners[2] | corners[3]
        all_pos = corners[0] & corners[1] & corners[2] & corners[3]
        return any_pos & ~all_pos

    return np.argwhere(changes(gx) & changes(gy))


def _newton(sample: FieldSample, x0: np.ndarray, tol: float, max_iter: int, max_step: float,
            leash: float = np.inf):
    x = x0.copy()
    active = np.ones(len(x), dtype=bool)
    res = np.full(len(x), np.inf)
    for _ in range(max_iter):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        _, g, h = sample.derivatives(x[idx])
        gn = np.hypot(g[:, 0], g[:, 1])
        res[idx] = gn
        done = gn <= tol
        active[idx[done]] = False
        idx, g, h = idx[~done], g[~done], h[~done]
        if len(idx) == 0:
            break
        det = h[:, 0] * h[:, 2] - h[:, 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = -(h[:, 2] * g[:, 0] - h[:, 1] * g[:, 1]) / det
            dy = -(-h[:, 1] * g[:, 0] + h[:, 0] * g[:, 1]) / det
        step = np.column_stack([dx, dy])
        norm = np.hypot(dx, dy)
        bad = ~np.isfinite(norm)
        scale = np.where(norm > max_step, max_step / np.where(norm > 0, norm, 1), 1.0)
        step = np.where(bad[:, None], 0.0, step * scale[:, None])
        active[idx[bad]] = False
        x[idx] = x[idx] + step
        # seeds drifting away from their cell belong to a neighbour's point
        far = np.hypot(*(x[idx] - x0[idx]).T) > leash
        active[idx[far]] = False
    _, g, h = sample.derivatives(x)
    res = np.hypot(g[:, 0], g[:, 1])
    return np.mod(x, sample.L), res, h


def _dedup(points: np.ndarray, L: float, radius: float) -> np.ndarray:
    """Indices of a subset with no two points closer than ``radius`` (torus metric)."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    tree = cKDTree(np.mod(points, L), boxsize=L)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    keep = np.ones(len(points), dtype=bool)
    if len(pairs):
        # drop the later index of each close pair; greedy but order-stable
        for i, j in pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]:
            if keep[i] and keep[j]:
                keep[j] = False
    return np.flatnonzero(keep)


def find_critical_points(
    sample: FieldSample,
    spacing: float = DEFAULT_SPACING,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = 40,
    dedup: float | None = None,
    sample_id: int = 0,
    leash: float = 3.0,
) -> PointSet:
    """All critical points of a sample, by grid bracketing and Newton refinement.

    Every grid cell whose corner signs allow both gradient components to
    vanish seeds a Newton iteration with exact derivatives.  Converged
    points are wrapped to [0, L)^2 and merged within ``dedup`` (default
    1e-6 L).  A seed that drifts more than ``leash`` cells from its start
    is abandoned, since a neighbouring cell brackets the point it is
    heading for.  Seeds that fail to converge are counted and logged.
    """
    L = sample.L
    n = max(int(math.ceil(L / spacing)), 8)
    idx = np.round(sample.K * L / (2 * math.pi)).astype(int)
    n = max(n, 2 * int(np.max(np.abs(idx), initial=0)) + 2)
    h = L / n
    gx, gy = sample.grid(n, ((1, 0), (0, 1)))
    cells = _candidate_cells(gx, gy)
    x0 = (cells + 0.5) * h
    x, res, hess = _newton(sample, x0, newton_tol, max_iter, max_step=h, leash=leash * h)
    ok = res <= newton_tol
    failures = int(np.count_nonzero(~ok))
    if failures:
        log.debug("sample %d: %d of %d Newton seeds did not converge", sample_id, failures, len(x0))
    x, hess, res = x[ok], hess[ok], res[ok]
    keep = _dedup(x, L, dedup if dedup is not None else 1e-6 * L)
    x, hess, res = x[keep], hess[keep], res[keep]
    det = hess[:, 0] * hess[:, 2] - hess[:, 1] ** 2
    trace = hess[:, 0] + hess[:, 2]
    nondeg = np.abs(det) > DEGENERATE_DET
    if not np.all(nondeg):
        log.debug("sample %d: dropped %d degenerate critical points", sample_id, int(np.sum(~nondeg)))
    x, det, trace, res = x[nondeg], det[nondeg], trace[nondeg], res[nondeg]
    order = np.lexsort((x[:, 1], x[:, 0]))
    return PointSet(
        x[order], _classify_codes(det[order], trace[order]), det[order], trace[order], res[order],
        L, sample_id, failures,
    )


# ---------------------------------------------------------------------------
# pair correlation
# ---------------------------------------------------------------------------


@dataclass
class PairHistogram:
    """Ordered pair counts per distance bin, kept per sample.

    ``per_sample[i, j]`` is the number of ordered pairs of sample i with
    distance in bin j.  The estimate is count / (area * annulus area),
    averaged over samples, with the across-sample standard error.
    """

    edges: np.ndarray
    per_sample: np.ndarray
    area: float
    type_pair: tuple[str, str] | None = None

    @property
    def n_samples(self) -> int:
        return self.per_sample.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return self.per_sample.sum(axis=0)

    @property
    def annulus(self) -> np.ndarray:
        return math.pi * (self.edges[1:] ** 2 - self.edges[:-1] ** 2)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def per_sample_k2(self) -> np.ndarray:
        return self.per_sample / (self.area * self.annulus)

    @property
    def k2_hat(self) -> np.ndarray:
        return self.per_sample_k2().mean(axis=0)

    @property
    def std_err(self) -> np.ndarray:
        if self.n_samples < 2:
            return np.full(len(self.annulus), np.nan)
        return self.per_sample_k2().std(axis=0, ddof=1) / math.sqrt(self.n_samples)

    def merge(self, other: "PairHistogram") -> "PairHistogram":
        if not np.array_equal(self.edges, other.edges) or self.area != other.area:
            raise ValueError("histograms differ in bins or area")
        if self.type_pair != other.type_pair:
            raise ValueError("histograms count different type pairs")
        return PairHistogram(self.edges, np.vstack([self.per_sample, other.per_sample]), self.area, self.type_pair)

    def records(self) -> list[dict]:
        return [
            {"r_lo": float(a), "r_hi": float(b), "k2_hat": float(k), "std_err": float(e), "n_pairs": int(c)}
            for a, b, k, e, c in zip(self.edges[:-1], self.edges[1:], self.k2_hat, self.std_err, self.counts)
        ]


def _ordered_pair_counts(a: np.ndarray, b: np.ndarray | None, edges: np.ndarray, L: float) -> np.ndarray:
    """Ordered pairs (i, j), i != j, with torus distance in each bin."""
    if len(a) == 0 or (b is not None and len(b) == 0):
        return np.zeros(len(edges) - 1)
    ta = cKDTree(np.mod(a, L), boxsize=L)
    tb = ta if b is None else cKDTree(np.mod(b, L), boxsize=L)
    cum = ta.count_neighbors(tb, edges).astype(float)
    return np.diff(cum)


def empirical_pair_correlation(
    samples: Iterable[PointSet],
    edges: Sequence[float],
    typed: tuple[str, str] | str | None = None,
    L: float | None = None,
) -> PairHistogram:
    """Pair-correlation estimate K2_hat(r) from independent point sets.

    With ``typed=(a, b)`` only ordered pairs whose first point has type a
    and second type b are counted.  Distances use the torus metric, which
    needs edges[-1] <= L / 2.
    """
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bin edges must be increasing and nonnegative")
    if isinstance(typed, str):
        typed = tuple(t.strip() for t in typed.split(","))
    rows = []
    side = L
    for ps in samples:
        side = ps.L if side is None else side
        if ps.L != side:
            raise ValueError("all samples must share the torus side")
        if typed is None:
            rows.append(_ordered_pair_counts(ps.positions, None, edges, side))
        else:
            a, b = ps.select(typed[0]), ps.select(typed[1])
            rows.append(_ordered_pair_counts(a, None if typed[0] == typed[1] else b, edges, side))
    if side is None:
        raise ValueError("no samples")
    if edges[-1] > side / 2:
        raise ValueError(f"largest bin edge {edges[-1]} exceeds half the torus side {side / 2}")
    hist = PairHistogram(edges, np.array(rows), side * side, typed)
    empty = np.flatnonzero(hist.counts == 0)
    if len(empty):
        warnings.warn(f"bins {empty.tolist()} contain no pairs", EmptyBin, stacklevel=2)
    return hist


def simulate_poisson(intensity: float, L: float, n_samples: int, seed: int = 0) -> list[PointSet]:
    """Homogeneous Poisson point sets on the torus (untyped)."""
    out = []
    for i in range(n_samples):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x9015, i])))
        n = rng.poisson(intensity * L * L)
        pos = rng.uniform(0, L, size=(n, 2))
        z = np.zeros(n)
        out.append(PointSet(pos, np.full(n, -1, dtype=np.int8), z, z.copy(), z.copy(), L, i))
    return out


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _map_ordered(func: Callable[[int], object], indices: Sequence[int], threads: int | None):
    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(func, indices))
    return [func(i) for i in indices]


def simulate(
    sampler: SpectralSampler,
    n_samples: int,
    spacing: float = DEFAULT_SPACING,
    threads: int | None = None,
    start: int = 0,
) -> list[PointSet]:
    """Critical points of samples start .. start + n_samples - 1, in order."""

    def job(i):
        return find_critical_points(sampler.sample(i), spacing=spacing, sample_id=i)

    return _map_ordered(job, range(start, start + n_samples), threads)


def empirical_covariance(sampler: SpectralSampler, lags: Sequence[float], n_samples: int = 200,
                         points: int = 64, threads: int | None = None):
    """Mean and standard error of F(x) F(x + lag e) over samples.

    Each sample contributes the average over ``points`` random base points
    and directions, so samples are independent and the standard error is
    the across-sample one.
    """
    lags = np.asarray(lags, dtype=float)

    def job(i):
        field_ = sampler.sample(i)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(sampler.seed), 0xC0F, i])))
        x = rng.uniform(0, sampler.L, size=(points, 2))
        th = rng.uniform(0, 2 * math.pi, size=points)
        e = np.column_stack([np.cos(th), np.sin(th)])
        f0 = field_.value(x)
        return np.array([np.mean(f0 * field_.value(x + lag * e)) for lag in lags])

    vals = np.array(_map_ordered(job, range(n_samples), threads))
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(n_samples)
