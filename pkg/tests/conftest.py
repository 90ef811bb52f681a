import pytest

from critpoints.covariance import parse_model, taylor_coeffs
from critpoints.quadrature import SphereQuadrature

CATALOG = ("rwm", "bf", "mix:0.5")


@pytest.fixture(params=CATALOG)
def model(request):
    return request.param


@pytest.fixture
def kernel(model):
    return parse_model(model)


@pytest.fixture
def coeffs(kernel):
    return taylor_coeffs(kernel)


@pytest.fixture
def small_quad():
    return SphereQuadrature(200_000, seed=11)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def emit(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
