import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mealdetect.simulator import load_patient_config

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def patient_config():
    return load_patient_config()


@pytest.fixture(scope="session")
def params(patient_config):
    return patient_config.params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
