import math

import numpy as np
import pytest

from critpoints.covariance import rwm
from critpoints.exceptions import DegenerateHessian, EmptyBin, ModeBudgetTooSmall
from critpoints.fieldsim import (
    PairHistogram,
    SpectralSampler,
    classify,
    debug_field,
    empirical_covariance,
    empirical_pair_correlation,
    find_critical_points,
    simulate,
    simulate_poisson,
)
from critpoints.kacrice import density_k1
from critpoints.covariance import taylor_coeffs


class TestDebugField:
    def test_four_points_with_types(self):
        ps = find_critical_points(debug_field())
        assert len(ps) == 4
        assert (ps.count("min"), ps.count("max"), ps.count("saddle")) == (1, 1, 2)
        assert ps.euler_defect == 0
        assert np.max(ps.residual) <= 1e-10

    def test_positions(self):
        ps = find_critical_points(debug_field())
        pts = {(round(p.position[0] / math.pi) % 2, round(p.position[1] / math.pi) % 2): p.type for p in ps}
        assert pts == {(0, 0): "max", (1, 1): "min", (0, 1): "saddle", (1, 0): "saddle"}

    def test_spacing_independent(self):
        a = find_critical_points(debug_field(), spacing=0.3)
        b = find_critical_points(debug_field(), spacing=0.05)
        assert np.allclose(a.positions, b.positions, atol=1e-9)

    def test_requires_period(self):
        with pytest.raises(ValueError):
            debug_field(L=5.0)


class TestClassify:
    @pytest.mark.parametrize(
        "hess, kind",
        [([[2, 0], [0, 1]], "min"), ([[-2, 0], [0, -1]], "max"), ([[1, 0], [0, -1]], "saddle"), ((1, 2, 1), "saddle")],
    )
    def test_types(self, hess, kind):
        assert classify(hess) == kind

    def test_degenerate(self):
        with pytest.raises(DegenerateHessian):
            classify([[1, 1], [1, 1]])


class TestSampler:
    def test_unit_variance_and_covariance(self):
        for model in ("bf", "rwm"):
            s = SpectralSampler(model, L=20)
            assert s.covariance(0.0)[0] == pytest.approx(1.0, abs=1e-12)

    def test_discretized_covariance_close_to_kernel(self):
        s = SpectralSampler("bf", L=20)
        r = np.array([0.5, 1.0, 2.0])
        assert np.allclose(s.covariance(r), s.kernel(r), atol=1e-3)

    @pytest.mark.parametrize("model", ["bf", "rwm"])
    def test_empirical_covariance(self, model):
        s = SpectralSampler(model, L=20, seed=3)
        lags = [0.0, 0.5, 1.0]
        mean, se = empirical_covariance(s, lags, n_samples=100)
        assert np.all(np.abs(mean - s.covariance(lags)) <= 4 * se)

    def test_gradient_variance(self):
        s = SpectralSampler("bf", L=20, seed=5)
        x = np.random.default_rng(0).uniform(0, 20, (16, 2))
        g = np.concatenate([s.sample(i).derivatives(x)[1] for i in range(100)])
        var = g.var(axis=0)
        assert np.allclose(var, 2.0, rtol=0.1)

    def test_deterministic_samples(self):
        a = SpectralSampler("rwm", L=20, seed=4).sample(7)
        b = SpectralSampler("rwm", L=20, seed=4).sample(7)
        c = SpectralSampler("rwm", L=20, seed=4).sample(8)
        assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)
        assert not np.array_equal(a.a, c.a)

    def test_mode_budget(self):
        full = SpectralSampler("bf", L=20)
        with pytest.raises(ModeBudgetTooSmall):
            SpectralSampler("bf", L=20, mode_budget=10)
        assert SpectralSampler("bf", L=20, mode_budget=full.n_modes).n_modes == full.n_modes

    def test_mode_budget_doubling_keeps_counts(self):
        s = SpectralSampler("bf", L=10, seed=2, mass_tol=1e-2)
        big = SpectralSampler("bf", L=10, seed=2, mass_tol=1e-4)
        assert big.n_modes > s.n_modes
        c1 = np.mean([p.count() for p in simulate(s, 30)])
        c2 = np.mean([p.count() for p in simulate(big, 30)])
        expected = density_k1(taylor_coeffs(s.kernel)).per_area * 100
        assert abs(c1 - expected) < 0.05 * expected
        assert abs(c2 - expected) < 0.05 * expected

    def test_unknown_kernel(self):
        from critpoints.exceptions import ModelSpecError

        with pytest.raises(ModelSpecError):
            SpectralSampler("poly:1,0.4,0.2", L=10)


class TestSimulation:
    def test_rwm_count_and_morse(self):
        s = SpectralSampler("rwm", L=20, seed=1)
        sets = simulate(s, 40)
        counts = np.array([p.count() for p in sets])
        expected = density_k1(taylor_coeffs(rwm())).per_area * 400
        se = counts.std(ddof=1) / math.sqrt(len(counts))
        assert abs(counts.mean() - expected) <= 4 * se + 0.01 * expected
        assert np.mean([p.euler_defect == 0 for p in sets]) >= 0.95

    def test_rescaled_model_scales_positions(self):
        a = simulate(SpectralSampler("rwm", L=20, seed=1), 2)
        b = simulate(SpectralSampler(rwm().rescaled(0.5), L=40, seed=1), 2)
        for pa, pb in zip(a, b):
            assert len(pa) == len(pb)
            assert np.allclose(np.sort(pb.positions[:, 0]), 2 * np.sort(pa.positions[:, 0]), atol=1e-8)
            assert np.array_equal(np.sort(pa.types), np.sort(pb.types))

    def test_thread_count_does_not_change_result(self):
        s = SpectralSampler("rwm", L=20, seed=9)
        one = simulate(s, 4, threads=1)
        many = simulate(s, 4, threads=3)
        for a, b in zip(one, many):
            assert np.array_equal(a.positions, b.positions)

    @pytest.mark.filterwarnings("ignore::critpoints.exceptions.EmptyBin")
    def test_typed_min_min_suppressed_near_diagonal(self):
        sets = simulate(SpectralSampler("rwm", L=20, seed=1), 20)
        edges = np.linspace(0, 0.6, 4)
        mm = empirical_pair_correlation(sets, edges, typed="min,min")
        ms = empirical_pair_correlation(sets, edges, typed="min,saddle")
        assert mm.counts[0] == 0
        assert ms.counts[0] > 0


class TestPairCorrelation:
    def test_poisson(self):
        sets = simulate_poisson(0.5, 10.0, 400, seed=1)
        hist = empirical_pair_correlation(sets, np.linspace(0.5, 3, 6))
        assert np.all(np.abs(hist.k2_hat - 0.25) <= 3.5 * hist.std_err)

    def test_merge(self):
        sets = simulate_poisson(0.5, 10.0, 20, seed=2)
        edges = np.linspace(0, 2, 5)
        whole = empirical_pair_correlation(sets, edges)
        merged = empirical_pair_correlation(sets[:7], edges).merge(empirical_pair_correlation(sets[7:], edges))
        assert np.array_equal(whole.per_sample, merged.per_sample)
        with pytest.raises(ValueError):
            whole.merge(empirical_pair_correlation(sets, np.linspace(0, 2, 3)))

    def test_empty_bin_warns(self):
        sets = simulate_poisson(0.01, 10.0, 2, seed=3)
        with pytest.warns(EmptyBin):
            empirical_pair_correlation(sets, [0, 0.01, 0.02])

    def test_edge_beyond_half_side(self):
        with pytest.raises(ValueError):
            empirical_pair_correlation(simulate_poisson(0.5, 10.0, 2), [0, 6.0])

    def test_records(self):
        hist = PairHistogram(np.array([0.0, 1.0]), np.array([[2.0], [4.0]]), 100.0)
        rec = hist.records()[0]
        assert rec["n_pairs"] == 6
        assert rec["k2_hat"] == pytest.approx(3 / (100 * math.pi))
