import functools
from pathlib import Path

import numpy as np
import pytest

from quadfdr.config import load_scenario
from quadfdr.dynamics import VehicleParams
from quadfdr.sim import run_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.yaml"


@functools.lru_cache(maxsize=None)
def cached_run(name: str, overrides: tuple = (), seed=None):
    """Simulate a corpus scenario once per test session."""
    cfg = load_scenario(scenario_path(name), list(overrides), seed=seed)
    log, summary = run_scenario(cfg)
    return cfg, log, summary


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] C{number} {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
