import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from critpoints.covariance import (
    BesselKernel,
    CallableKernel,
    ConstantKernel,
    GaussianKernel,
    PolynomialKernel,
    bargmann_fock,
    check_admissibility,
    finite_difference,
    mixture,
    normalize,
    parse_model,
    rwm,
    taylor_coeffs,
)
from critpoints.exceptions import (
    CoefficientWarning,
    DegenerateField,
    InadmissibleCoefficients,
    ModelSpecError,
)

x = sp.symbols("x")


def _sympy_g(expr):
    """g_2k = (-1)^k C^(2k)(0) / (2k)! from a symbolic series."""
    ser = sp.series(expr, x, 0, 10).removeO()
    return tuple(float((-1) ** k * ser.coeff(x, 2 * k)) for k in range(1, 5))


@pytest.mark.parametrize(
    "kern, expr",
    [
        (rwm(), sp.besselj(0, 2 * x)),
        (bargmann_fock(), sp.exp(-(x**2))),
        (mixture(0.3), 0.3 * sp.besselj(0, 2 * x) + 0.7 * sp.exp(-(x**2))),
    ],
)
def test_taylor_coefficients_match_symbolic_series(kern, expr):
    assert taylor_coeffs(kern).as_tuple() == pytest.approx(_sympy_g(expr), rel=1e-14)


def test_catalog_coefficients():
    c = taylor_coeffs(rwm())
    assert (c.g2, c.g4, c.g6, c.g8) == pytest.approx((1, 1 / 4, 1 / 36, 1 / 576), rel=1e-15)
    assert c.normalized
    c = taylor_coeffs(bargmann_fock())
    assert (c.g2, c.g4, c.g6, c.g8) == pytest.approx((1, 1 / 2, 1 / 6, 1 / 24), rel=1e-15)


def test_constant_kernel_is_degenerate():
    c = taylor_coeffs(ConstantKernel())
    assert c.as_tuple() == (0, 0, 0, 0)
    assert c.degenerate
    with pytest.raises(DegenerateField):
        normalize(ConstantKernel())


def test_mixture_coefficients_are_convex_combinations():
    a, b = taylor_coeffs(rwm()).as_tuple(), taylor_coeffs(bargmann_fock()).as_tuple()
    for w in (0.0, 0.25, 0.5, 1.0):
        got = taylor_coeffs(mixture(w)).as_tuple()
        assert got == pytest.approx(tuple(w * p + (1 - w) * q for p, q in zip(a, b)), rel=1e-14)


@pytest.mark.parametrize("r", [0.05, 0.2, 1.0])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_derivatives_agree_with_finite_differences(kernel, r, k):
    analytic = float(kernel.deriv(r, k))
    numeric = finite_difference(lambda t: float(kernel.eval(t)), r, k)
    assert analytic == pytest.approx(numeric, rel=1e-6, abs=1e-8)


def test_kernels_are_even_with_unit_variance(kernel):
    assert float(kernel.eval(0.0)) == 1.0
    assert float(kernel.deriv(0.0, 1)) == pytest.approx(0, abs=1e-14)
    assert float(kernel.deriv(0.0, 3)) == pytest.approx(0, abs=1e-12)


def test_normalize_examples():
    k = normalize(BesselKernel(1.0, 1.0, "j0"))
    assert k.wavenumber == pytest.approx(2.0)
    assert k.scale == pytest.approx(2.0)
    assert taylor_coeffs(k).g4 == pytest.approx(0.25)
    k = normalize(GaussianKernel(0.5))
    assert k.rate == pytest.approx(1.0)
    assert k.scale == pytest.approx(math.sqrt(2))
    k = rwm()
    assert normalize(k) is k


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0), st.floats(0.0, 1.0))
def test_normalized_kernels_have_unit_g2(kappa, rate, w):
    for kern in (BesselKernel(kappa), GaussianKernel(rate), PolynomialKernel(0.3, 0.1, 0.01, g2=rate)):
        assert taylor_coeffs(normalize(kern), probe=False).g2 == pytest.approx(1.0, abs=1e-12)
    from critpoints.covariance import MixtureKernel

    mix = MixtureKernel(w, BesselKernel(kappa), GaussianKernel(rate))
    assert taylor_coeffs(normalize(mix), probe=False).g2 == pytest.approx(1.0, abs=1e-12)


def test_admissibility_examples():
    rep = check_admissibility(taylor_coeffs(rwm()))
    assert rep.slack == pytest.approx(1 / 144, rel=1e-12)
    assert rep.warnings == []
    assert rep.b_sign_value == pytest.approx(1 / 24, rel=1e-12)
    rep = check_admissibility(taylor_coeffs(bargmann_fock()))
    assert rep.slack == pytest.approx(5 / 12 - 1 / 4, rel=1e-12)
    assert rep.warn_b_sign
    rep = check_admissibility(taylor_coeffs(PolynomialKernel(1.0, 0.4, 0.1)))
    assert rep.degenerate


def test_admissibility_emits_warnings():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        check_admissibility(taylor_coeffs(bargmann_fock()), emit=True)
    assert any(issubclass(w.category, CoefficientWarning) for w in caught)


def test_cauchy_schwarz_violation_raises():
    with pytest.raises(InadmissibleCoefficients):
        check_admissibility(taylor_coeffs(PolynomialKernel(1.0, 0.3, 0.1)))


@pytest.mark.parametrize("model_id", ["", "mix:1.5", "mix:abc", "poly:1,2", "gauss"])
def test_bad_model_specs(model_id):
    with pytest.raises(ModelSpecError):
        parse_model(model_id)


def test_model_grammar():
    assert parse_model("rwm") == rwm()
    assert parse_model("BF") == bargmann_fock()
    assert parse_model("mix:0.25").weight == 0.25
    assert parse_model("poly:1,0.4,0.1").g6 == 0.4


def test_callable_kernel_numeric_coefficients():
    kern = CallableKernel(lambda r: math.exp(-r * r))
    c = taylor_coeffs(kern)
    assert not c.exact
    assert c.g2 == pytest.approx(1.0, rel=1e-6)
    assert c.g4 == pytest.approx(0.5, rel=1e-4)
    assert float(kern.deriv(0.5, 2)) == pytest.approx(float(bargmann_fock().deriv(0.5, 2)), rel=1e-6)


def test_rescaled_kernel_values():
    k = bargmann_fock().rescaled(2.0)
    assert float(k.eval(0.3)) == pytest.approx(math.exp(-0.36))
    assert k.scale == 2.0
    g = taylor_coeffs(mixture(0.5).rescaled(0.5), probe=False)
    assert g.g2 == pytest.approx(0.25)
    assert np.all(np.isfinite(mixture(0.5).rescaled(0.5).eval(np.linspace(0, 2, 5))))
