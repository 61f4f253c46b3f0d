from pathlib import Path

import pytest

from helpers import random_network
from sebays.config import load_config
from sebays.numeric import RngStream
from sebays.runner import cmd_train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng():
    return RngStream(1234, 0)


@pytest.fixture
def small_net():
    return random_network(0)


@pytest.fixture(scope="session")
def moons_runs(tmp_path_factory):
    """Default-plan two-moons runs for seeds 0, 1, 2, trained once per session."""
    root = tmp_path_factory.mktemp("moons")
    runs = {}
    for seed in range(3):
        cfg = load_config(CONFIGS / "two_moons.yaml", [f"seed={seed}"])
        runs[seed] = cmd_train(cfg, root / f"seed{seed}")
    return runs


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
