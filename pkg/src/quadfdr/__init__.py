"""Quadrotor sensor-attack detection, isolation and attitude recovery."""

from .config import ScenarioConfig, load_scenario
from .sim import FlightLog, RunSummary, run_scenario

__all__ = ["ScenarioConfig", "load_scenario", "FlightLog", "RunSummary", "run_scenario"]
__version__ = "0.1.0"
