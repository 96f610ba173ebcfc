import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from paradnn import builtin_grids, builtin_platforms
from paradnn.harness import SweepConfig, run_sweep


@pytest.fixture(scope="session")
def platforms():
    return builtin_platforms()


@pytest.fixture(scope="session")
def fc_tpu_record():
    """Full FC grid estimated on TPU-v2; shared because it takes a few seconds."""
    return run_sweep(SweepConfig(family="fc", platforms=["tpu-v2"]))


@pytest.fixture(scope="session")
def fc_grid():
    return builtin_grids()["fc"]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
