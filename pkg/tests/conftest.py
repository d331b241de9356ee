import numpy as np
import pytest

from journey_risk.datagen import GenConfig, generate


@pytest.fixture(scope="session")
def small_ds():
    return generate(GenConfig(n_patients=120, n_features=4, t_min=5, t_max=12, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
