import pytest

from equishoot.equilibrium import build_equilibrium
from equishoot.params import REFERENCE_RAW, derive_params, params_from_delta
from equishoot.shooting import find_xi0


@pytest.fixture(scope="session")
def ref_params():
    return derive_params(REFERENCE_RAW)


@pytest.fixture(scope="session")
def ref_critical(ref_params):
    return find_xi0(ref_params)


@pytest.fixture(scope="session")
def ref_eq(ref_params, ref_critical):
    return build_equilibrium(ref_critical, ref_params)


@pytest.fixture(scope="session")
def equal_patience():
    """Equal time preferences (delta = 0), the classical regression case."""
    p = params_from_delta(0.5, 0.0, 3.0, allow_degenerate=True)
    cs = find_xi0(p)
    return p, cs, build_equilibrium(cs, p)


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
