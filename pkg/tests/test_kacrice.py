import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critpoints.covariance import (
    PolynomialKernel,
    TaylorCoeffs,
    bargmann_fock,
    mixture,
    parse_model,
    rwm,
    taylor_coeffs,
)
from critpoints.exceptions import (
    CoefficientWarning,
    ComplexBranch,
    G8BranchNegative,
    NonPositiveValue,
    QuadratureUnderResolved,
)
from critpoints.kacrice import (
    TYPES,
    asymptotic_constants,
    bc_coefficients,
    decay_exponent_fit,
    density_k1,
    expected_abs_det_hessian,
    k2,
    k2_original_units,
    mc_abs_det_Y,
    second_factorial_moment,
    typed_k2,
)
from critpoints.quadrature import SphereQuadrature

SQ3 = math.sqrt(3)


def _unit(n, seed=0):
    s = np.random.default_rng(seed).standard_normal((n, 6))
    return s / np.linalg.norm(s, axis=1, keepdims=True)


def _coeffs(g4, g6, g8=0.0):
    return TaylorCoeffs(1.0, g4, g6, g8, True)


class TestDensity:
    def test_rwm(self):
        d = density_k1(taylor_coeffs(rwm()), radius=2.0)
        assert d.count_in_ball == pytest.approx(2 / SQ3 * 4)
        assert d.per_area == pytest.approx(0.36755, abs=1e-5)

    def test_bargmann_fock(self):
        d = density_k1(taylor_coeffs(bargmann_fock()))
        assert d.per_area == pytest.approx(4 / (SQ3 * math.pi), rel=1e-15)

    def test_degenerate(self):
        assert density_k1(_coeffs(0.0, 0.0)).per_area == 0

    def test_original_units(self):
        d = density_k1(taylor_coeffs(rwm()), scale=2.0).in_original_units()
        assert d.per_area == pytest.approx(0.36755 / 4, abs=1e-5)


def test_expected_abs_det_hessian():
    assert expected_abs_det_hessian(_coeffs(0.25, 1 / 36)) == pytest.approx(8 / SQ3)
    assert expected_abs_det_hessian(_coeffs(0.0, 0.0)) == 0


def test_mc_abs_det_y():
    mean, se = mc_abs_det_Y(200_000, seed=2)
    assert abs(mean - 4 / SQ3) <= 4 * se


class TestAsymptoticConstants:
    def test_rwm(self):
        c = asymptotic_constants(taylor_coeffs(rwm()))
        assert c.phi == pytest.approx(1 / 64)
        assert c.varphi == pytest.approx(-1 / 576)
        assert c.A == pytest.approx(0, abs=1e-12)
        assert c.B == pytest.approx(math.sqrt(1 / 288))
        assert c.a_F == pytest.approx(SQ3 / (36 * math.pi**2), rel=1e-12)
        assert c.a_F == pytest.approx(0.0048748, rel=1e-4)
        assert c.k2_limit == pytest.approx(2 * c.a_F)

    def test_bargmann_fock(self):
        c = asymptotic_constants(taylor_coeffs(bargmann_fock()))
        assert (c.phi, c.varphi, c.A) == pytest.approx((1, -1 / 3, 0), abs=1e-12)
        assert c.B == pytest.approx(math.sqrt(2 / 3))
        assert c.a_F == pytest.approx(2 / (SQ3 * math.pi**2), rel=1e-12)

    def test_boundary_gives_zero(self):
        # g4^2 / g6 = 5/2 lies past the spectral bound, so only the signed form exists
        c = asymptotic_constants(_coeffs(1.0, 0.4), strict=False)
        assert c.a_F == pytest.approx(0, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.25, 3.0), st.floats(1.0, 5.0))
    def test_identity_on_realizable_pairs(self, g4, ratio):
        # g4^2 <= (9/4) g6 for every covariance with a spectral measure
        g6 = g4 * g4 / 2.25 * ratio
        c = asymptotic_constants(_coeffs(g4, g6))
        assert c.A2 >= 0 and c.B2 >= 0
        assert c.A2 + c.B2 == pytest.approx((10 * g6 - 4 * g4 * g4) * math.sqrt(c.phi), rel=1e-12)
        assert c.a_F == pytest.approx(c.a_F_simplified, rel=1e-12)
        assert c.phi > 0

    def test_unrealizable_band_is_complex(self):
        with pytest.raises(ComplexBranch):
            asymptotic_constants(_coeffs(1.29, 0.70))
        c = asymptotic_constants(_coeffs(1.29, 0.70), strict=False)
        assert c.a_F == pytest.approx(c.a_F_simplified, rel=1e-12)
        assert math.isnan(c.A)


class TestBCCoefficients:
    def test_rwm_b11_vanishes(self):
        bc = bc_coefficients(taylor_coeffs(rwm()), _unit(100))
        assert np.max(np.abs(bc.b11)) <= 1e-10

    def test_b10_value(self):
        s = np.zeros(6)
        s[5] = 1.0
        bc = bc_coefficients(taylor_coeffs(rwm()), s)
        assert float(bc.b10) == pytest.approx(-8 / SQ3 * 0.5)

    def test_antisymmetry_between_points(self, coeffs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoefficientWarning)
            bc = bc_coefficients(coeffs, _unit(50, seed=1))
        assert np.array_equal(bc.c21, -bc.c11)
        assert np.array_equal(bc.b21, -bc.b11)
        assert np.all(bc.c10 == 0) and np.all(bc.c20 == 0)

    def test_b10_depends_only_on_last_component(self):
        s = _unit(20, seed=3)
        t = s.copy()
        t[:, :5] = np.random.default_rng(9).standard_normal((20, 5))
        c = taylor_coeffs(rwm())
        assert np.array_equal(bc_coefficients(c, s).b10, bc_coefficients(c, t).b10)

    def test_bargmann_fock_sign_default_warns(self):
        with pytest.warns(CoefficientWarning):
            bc = bc_coefficients(taylor_coeffs(bargmann_fock()), _unit(3))
        assert bc.sign_defaulted

    def test_negative_g8_branch(self):
        with pytest.raises(G8BranchNegative):
            bc_coefficients(_coeffs(0.25, 1 / 36, 0.0), _unit(2))


class TestK2:
    def test_nonnegative_and_near_limit(self, kernel, coeffs, small_quad):
        est = k2(kernel, 0.02, small_quad, coeffs=coeffs)
        lim = asymptotic_constants(coeffs).k2_limit
        assert est.value >= 0
        assert abs(est.value - lim) <= 4 * est.std_error + 2e-3 * lim

    def test_methods_agree(self, small_quad):
        kern = mixture(0.5)
        a = k2(kern, 0.4, small_quad)
        b = k2(kern, 0.4, small_quad, method="line")
        assert abs(a.value - b.value) <= 4 * math.hypot(a.std_error, b.std_error)

    def test_record(self, small_quad):
        rec = k2(rwm(), 0.1, small_quad).to_record()
        assert set(rec) == {"model", "r", "value", "std_error", "n_samples", "seed"}
        rec = typed_k2(rwm(), 0.1, "min,min", small_quad).to_record()
        assert rec["type_pair"] == "min,min"

    def test_rtol_violation(self):
        with pytest.raises(QuadratureUnderResolved):
            k2(rwm(), 0.3, SphereQuadrature(1000, seed=1), rtol=1e-6)

    def test_below_minimum_radius_uses_series(self, small_quad):
        est = k2(rwm(), 5e-4, small_quad)
        assert est.value == pytest.approx(asymptotic_constants(taylor_coeffs(rwm())).k2_limit, rel=2e-2)

    def test_unit_conversion(self):
        q = SphereQuadrature(50_000, seed=4)
        raw = rwm().rescaled(0.5)
        conv = k2_original_units(raw, 0.6, q)
        direct = k2(rwm(), 0.3, q)
        assert conv.value == pytest.approx(direct.value / 16, rel=1e-8)

    def test_typed_pairs_partition_total(self, small_quad):
        kern = mixture(0.5)
        total = k2(kern, 0.3, small_quad)
        parts = [typed_k2(kern, 0.3, (a, b), small_quad, method="sphere")
                 for a in TYPES[:3] for b in TYPES[:3]]
        assert sum(p.value for p in parts) == pytest.approx(total.value, rel=1e-12)

    def test_extremum_decomposition(self, small_quad):
        kern = mixture(0.5)
        get = lambda a, b: typed_k2(kern, 0.3, (a, b), small_quad, method="sphere").value  # noqa: E731
        ext = get("extremum", "extremum")
        assert ext == pytest.approx(get("min", "min") + get("max", "max") + get("min", "max") + get("max", "min"), rel=1e-10)

    def test_typed_methods_agree(self, small_quad):
        kern = mixture(0.5)
        a = typed_k2(kern, 0.4, "saddle,saddle", small_quad, method="sphere")
        b = typed_k2(kern, 0.4, "saddle,saddle", small_quad, method="line")
        assert abs(a.value - b.value) <= 4 * math.hypot(a.std_error, b.std_error)

    def test_bad_pair(self):
        with pytest.raises(ValueError):
            typed_k2(rwm(), 0.3, ("min", "peak"))


def test_second_factorial_moment_small_disc():
    q = SphereQuadrature(100_000, seed=6)
    val, err = second_factorial_moment(bargmann_fock(), 0.05, q)
    lim = asymptotic_constants(taylor_coeffs(bargmann_fock())).k2_limit
    assert val == pytest.approx(lim * math.pi**2 * 0.05**4, rel=0.05)
    assert err > 0


def test_second_factorial_moment_matches_k2_integral():
    # with K2 constant the double integral is K2 * (pi R^2)^2
    from critpoints import kacrice

    q = SphereQuadrature(1000, seed=1, batches=4)
    real = kacrice._k2_estimate
    try:
        kacrice._k2_estimate = lambda *a, **k: kacrice.K2Estimate(0.1, 1.0, 0.0, 1, 0)
        val, _ = second_factorial_moment(rwm(), 0.3, q)
        assert val == pytest.approx((math.pi * 0.09) ** 2, rel=1e-10)
        kacrice._k2_estimate = lambda *a, **k: kacrice.K2Estimate(0.1, 0.0, 0.0, 1, 0)
        assert second_factorial_moment(rwm(), 0.3, q)[0] == 0
    finally:
        kacrice._k2_estimate = real


class TestExponentFit:
    r = np.geomspace(0.05, 0.4, 8)

    @pytest.mark.parametrize("p", [3, 7])
    def test_exact_power(self, p):
        fit = decay_exponent_fit(self.r, 2.5 * self.r**p)
        assert fit.slope == pytest.approx(p, abs=1e-10)

    def test_log_correction(self):
        r = np.geomspace(1e-3, 0.05, 8)
        fit = decay_exponent_fit(r, r**3 * np.log(1 / r))
        assert 2.5 <= fit.slope <= 3.0

    def test_weighted(self):
        v = self.r**3
        fit = decay_exponent_fit(self.r, v, 0.01 * v)
        assert fit.slope == pytest.approx(3, abs=1e-10)
        assert fit.ci_low <= 3 <= fit.ci_high

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveValue):
            decay_exponent_fit(self.r, np.r_[0.0, self.r[1:]])
        with pytest.raises(ValueError):
            decay_exponent_fit(self.r[:3], self.r[:3])


def test_polynomial_kernel_small_r():
    kern = parse_model("poly:0.25,0.0277777777778,0.00173611111111")
    q = SphereQuadrature(50_000, seed=2)
    lim = asymptotic_constants(taylor_coeffs(kern)).k2_limit
    assert k2(kern, 0.01, q).value == pytest.approx(lim, rel=0.03)
    assert isinstance(kern, PolynomialKernel)
