import numpy as np
import pytest

from vbtrack.models import Region, constant_velocity, position_sensor

ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dyn():
    return constant_velocity()


@pytest.fixture
def sensor():
    return position_sensor(3.0, Region.square(500.0), detect_prob=0.9, clutter_rate=10.0)


@pytest.fixture
def quiet_sensor():
    return position_sensor(3.0, Region.square(500.0), detect_prob=0.9, clutter_rate=0.0)
