import numpy as np
import pytest

from turntaking.config import ExperimentConfig
from turntaking.experiments import train_fusion, train_prototypes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def trained(default_cfg):
    """Prototypes and frozen fusion model from the default observation phases."""
    protos = train_prototypes(default_cfg)
    fusion = train_fusion(default_cfg, protos)
    return protos, fusion


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
