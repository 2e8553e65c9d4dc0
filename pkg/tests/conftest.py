import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tuckersum.tucker import TuckerTensor

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def random_tucker(rng, dims, ranks):
    return TuckerTensor(rng.standard_normal(tuple(ranks)), [rng.standard_normal((n, r)) for n, r in zip(dims, ranks)])


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
