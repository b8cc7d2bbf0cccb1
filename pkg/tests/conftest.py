import numpy as np
import pytest

from spolab.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**overrides) -> RunConfig:
    doc = {
        "algorithm": "spo",
        "env": {"M": 8, "K": 3, "seed": 3},
        "batch_size": 4,
        "iterations": 5,
        "seed": 0,
        "optim": {"lr": 1.0, "minibatch": 2},
    }
    doc.update(overrides)
    return RunConfig.from_dict(doc)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
