"""Discrete-event simulator of an IoT platform-as-a-service hosting
concurrent processes in containers, with direct vs proxied routing."""

from .harness import (
    MetricsReport, ParseError, Scenario, Simulation, ValidationError,
    compare_modes, load_scenario, run_scenario,
)
from .simcore import MS, S, US, Engine, SimConfig

__all__ = [
    "Engine", "SimConfig", "US", "MS", "S",
    "Scenario", "Simulation", "MetricsReport", "ParseError", "ValidationError",
    "load_scenario", "run_scenario", "compare_modes",
]
