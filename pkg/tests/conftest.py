import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")


def _fig7():
    return json.loads(resources.files("aware.fixtures").joinpath("fig7.json").read_text())


@pytest.fixture(scope="session")
def fig7():
    return _fig7()


@pytest.fixture(scope="session")
def fig7b():
    return np.array(_fig7()["matrix_ms"], dtype=float)


@pytest.fixture(scope="session")
def fig7a():
    return np.array(_fig7()["raw_write_ms"], dtype=float)


def pytest_terminal_summary(terminalreporter):
    from .report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s[1:s.index(":")])):
            terminalreporter.write_line(line)
