"""Deterministic discrete-event simulation harness."""

from .clock import SimClock
from .prices import PricePath
from .scenario import Scenario
from .harness import RunResult, replay_log, run_scenario
from .library import scenario_library

__all__ = [
    "SimClock",
    "PricePath",
    "Scenario",
    "RunResult",
    "run_scenario",
    "replay_log",
    "scenario_library",
]
