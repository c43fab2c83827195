import copy
from importlib import resources

import pytest

from qp4link.config import load_scenario

SCENARIOS = resources.files("qp4link.scenarios")


def shipped(name):
    return load_scenario(str(SCENARIOS / f"{name}.toml"))


# Smallest valid document; tests copy it and change one thing.
BASE_DOC = {
    "name": "base",
    "seed": 1,
    "period_ns": 300000,
    "run": {"max_cycles": 20},
    "midpoint": {"p_bsm": 1.0},
    "nodes": [
        {
            "name": "A",
            "midpoint_port": 1,
            "phase_ns": 150000,
            "fiber": {"length_m": 25000, "p_arrive": 1.0},
            "gen_default": {"qubit_slot": 0, "attempt_params": 2},
        },
        {
            "name": "B",
            "midpoint_port": 2,
            "phase_ns": 150000,
            "fiber": {"length_m": 25000, "p_arrive": 1.0},
            "gen_default": {"qubit_slot": 0, "attempt_params": 2},
        },
    ],
}


@pytest.fixture
def doc():
    return copy.deepcopy(BASE_DOC)


# Acceptance verdicts, one line per criterion, shown after the test run.
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line[1])
