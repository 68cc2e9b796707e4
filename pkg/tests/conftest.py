import numpy as np
import pytest

from ifslearn.copula_core import TransformationMatrix, invariant_copula
from ifslearn.rkhs import GaussianKernel, nystrom_spectrum, quadrature_from_copula

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, passed: bool, detail: str) -> None:
        _CRITERIA.append(f"CRITERION {str(number):>4}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def _order(line: str):
    label = line.split(":")[0].split()[1]
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=_order):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def uniform_U():
    return TransformationMatrix.uniform(2)


def _spec(G):
    C = invariant_copula(TransformationMatrix.uniform(2), G)
    nodes, w = quadrature_from_copula(C)
    return nystrom_spectrum(GaussianKernel(0.5), nodes, w)


@pytest.fixture(scope="session")
def spec16():
    return _spec(16)


@pytest.fixture(scope="session")
def spec8():
    return _spec(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
