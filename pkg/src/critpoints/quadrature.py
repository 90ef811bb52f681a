"""Seeded batch Monte Carlo over Gaussian vectors and the unit sphere S^5.

Each batch draws from its own counter-based stream keyed by ``(seed, batch)``,
so results do not depend on how batches are scheduled across threads.
Batch means give the standard error.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

__all__ = ["SphereQuadrature", "SPHERE_AREA", "default_threads"]

DIM = 6
SPHERE_AREA = math.pi**3  # |S^5| = 2 pi^3 / Gamma(3)
THREADS_ENV = "CRITPOINTS_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SphereQuadrature:
    """Monte Carlo rule for integrals over R^6 (Gaussian weight) or S^5.

    Parameters
    ----------
    n_samples : int
        Total number of points, split evenly across ``batches``.
    seed : int
        Root seed; batch ``b`` uses the stream ``(seed, b)``.
    batches : int
        Number of independent batches used for the standard error.
    method : {"mc", "qmc"}
        Plain Monte Carlo, or scrambled Sobol points pushed through the
        Gaussian inverse CDF (one independent scramble per batch).
    threads : int, optional
        Worker threads; defaults to the ``CRITPOINTS_THREADS`` variable.
    chunk : int
        Largest block of points held in memory at once.
    """

    n_samples: int = 1_000_000
    seed: int = 0
    batches: int = 32
    method: str = "mc"
    threads: int | None = None
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.method not in ("mc", "qmc"):
            raise ValueError(f"method must be 'mc' or 'qmc', got {self.method!r}")
        if self.batches < 2:
            raise ValueError("need at least two batches for an error estimate")
        if self.n_samples < self.batches:
            raise ValueError("n_samples must be at least the number of batches")

    def batch_sizes(self) -> list[int]:
        base, extra = divmod(int(self.n_samples), self.batches)
        return [base + (b < extra) for b in range(self.batches)]

    def gaussian_chunks(self, batch: int) -> Iterator[np.ndarray]:
        """Standard normal 6-vectors of one batch, in chunks."""
        size = self.batch_sizes()[batch]
        ss = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, batch])
        rng = np.random.Generator(np.random.Philox(ss))
        if self.method == "qmc":
            sobol = qmc.Sobol(DIM, scramble=True, seed=rng)
            done = 0
            while done < size:
                m = min(self.chunk, size - done)
                u = np.clip(sobol.random(m), 1e-15, 1 - 1e-15)
                yield ndtri(u)
                done += m
            return
        done = 0
        while done < size:
            m = min(self.chunk, size - done)
            yield rng.standard_normal((m, DIM))
            done += m

    def _batch_sum(self, func: Callable[[np.ndarray], np.ndarray], batch: int, sphere: bool) -> float:
        total = 0.0
        for g in self.gaussian_chunks(batch):
            if sphere:
                g = g / np.linalg.norm(g, axis=1, keepdims=True)
            total += float(np.sum(func(g)))
        return total

    def _reduce(self, func, sphere: bool) -> tuple[float, float]:
        threads = self.threads or default_threads()
        batches = range(self.batches)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                sums = list(pool.map(lambda b: self._batch_sum(func, b, sphere), batches))
        else:
            sums = [self._batch_sum(func, b, sphere) for b in batches]
        sizes = np.array(self.batch_sizes(), dtype=float)
        means = np.array(sums) / sizes
        mean = float(np.sum(sums) / sizes.sum())
        # weighted batch-means variance; batch sizes differ by at most one
        var = float(np.sum(sizes * (means - mean) ** 2) / (sizes.sum() * (self.batches - 1)))
        return mean, math.sqrt(var)

    def expectation(self, func: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
        """E[func(g)] for g ~ N(0, I_6), with standard error."""
        return self._reduce(func, sphere=False)

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
        """Integral of ``func`` over S^5 against the surface measure."""
        mean, se = self._reduce(func, sphere=True)
        return SPHERE_AREA * mean, SPHERE_AREA * se
