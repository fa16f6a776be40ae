import numpy as np
import pytest

from ou_sampling.ou import REFERENCE_PARAMS
from ou_sampling.stopping import REFERENCE_DELAY


@pytest.fixture
def params():
    return REFERENCE_PARAMS


@pytest.fixture
def delay():
    return REFERENCE_DELAY


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one status line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)
