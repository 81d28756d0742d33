import numpy as np
import pytest

from mvassoc.data import standardize_outcomes
from mvassoc.simulation import simulate_dgp1


@pytest.fixture(scope="session")
def dgp1_small():
    return standardize_outcomes(simulate_dgp1(240, 11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.split("(")[0]), k)):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}")
