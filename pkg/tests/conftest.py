import numpy as np
import pytest

from online_mlr.datagen import ModelSpec, RegressorProcess


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def benchmark_model():
    return ModelSpec.ar1_benchmark()


@pytest.fixture
def sym_gaussian_model():
    # beta*' I beta* = 3, so the clustering bound is exactly 0.5 at sigma = 1
    return ModelSpec.symmetric_model(np.ones(3), 1.0, RegressorProcess.iid_gaussian(np.eye(3)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
