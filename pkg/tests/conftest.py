import sys

import numpy as np
import pytest

from quhe.scenario import surfnet_default
from quhe.stage1 import solve_stage1

from builders import seeded_run


@pytest.fixture(scope="session")
def surfnet():
    return surfnet_default()


@pytest.fixture(scope="session")
def surfnet_stage1(surfnet):
    return solve_stage1(surfnet)


@pytest.fixture(scope="session")
def surfnet_run():
    return seeded_run(42)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
