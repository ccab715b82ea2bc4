import numpy as np
import pytest

from hazard_ctmc.model import ParamMatrix


def random_theta(rng, n, scale=1.0, diag_shift=-0.5):
    theta = rng.normal(0.0, scale, (n, n))
    theta[np.diag_indices(n)] += diag_shift
    return theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def theta_star():
    return ParamMatrix(np.array([[0.0, 4.0], [0.0, -4.0]]))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment checks")


# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, desc, detail = ACCEPTANCE[num]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {status}: {desc} ({detail})")
