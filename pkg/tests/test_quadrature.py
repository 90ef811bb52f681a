import math

import numpy as np
import pytest

from critpoints.quadrature import SPHERE_AREA, SphereQuadrature


def test_sphere_area_constant():
    q = SphereQuadrature(100_000, seed=3)
    val, se = q.integrate(lambda s: np.ones(len(s)))
    assert val == pytest.approx(math.pi**3, rel=1e-14)
    assert SPHERE_AREA == pytest.approx(31.00627668, rel=1e-9)


@pytest.mark.parametrize("method", ["mc", "qmc"])
def test_sphere_second_moment(method):
    q = SphereQuadrature(2**16, seed=5, method=method)
    val, se = q.integrate(lambda s: s[:, 2] ** 2)
    assert abs(val - math.pi**3 / 6) <= 4 * se + 1e-12


def test_gaussian_expectation():
    q = SphereQuadrature(200_000, seed=7)
    val, se = q.expectation(lambda g: g[:, 0] ** 2 * g[:, 1] ** 2)
    assert abs(val - 1.0) <= 4 * se


def test_points_are_unit_vectors():
    q = SphereQuadrature(1000, seed=1, batches=4)
    seen = []
    q.integrate(lambda s: seen.append(np.linalg.norm(s, axis=1)) or np.zeros(len(s)))
    assert np.allclose(np.concatenate(seen), 1.0)


def test_result_independent_of_thread_count():
    f = lambda s: np.abs(s[:, 0] * s[:, 2] - s[:, 1] ** 2)  # noqa: E731
    one = SphereQuadrature(100_000, seed=9, threads=1).integrate(f)
    four = SphereQuadrature(100_000, seed=9, threads=4).integrate(f)
    assert one == four


def test_seed_changes_result():
    f = lambda s: s[:, 0] ** 2  # noqa: E731
    assert SphereQuadrature(10_000, seed=1).integrate(f) != SphereQuadrature(10_000, seed=2).integrate(f)


def test_batch_sizes_cover_all_samples():
    q = SphereQuadrature(1003, batches=10)
    assert sum(q.batch_sizes()) == 1003
    assert max(q.batch_sizes()) - min(q.batch_sizes()) <= 1


@pytest.mark.parametrize("kw", [{"method": "sobol"}, {"batches": 1}, {"n_samples": 3, "batches": 4}])
def test_invalid_configuration(kw):
    with pytest.raises(ValueError):
        SphereQuadrature(**kw)


def test_thread_env_default(monkeypatch):
    from critpoints.quadrature import default_threads

    monkeypatch.setenv("CRITPOINTS_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("CRITPOINTS_THREADS", "many")
    assert default_threads() == 1
