"""Resilient virtual spring-damper swarms.

Formation control over a Gabriel mesh, sign-statistics consistency
monitoring against man-in-the-middle tampering, and a hidden motion
signature that lets vehicles announce discovered objects without
broadcasting them.
"""
from .errors import ConfigError, InvariantViolation
from .scenario import Scenario, load_scenario, parse_scenario
from .engine import Mode, World, run_scenario, run_step

__all__ = ["ConfigError", "InvariantViolation", "Scenario", "load_scenario", "parse_scenario",
           "Mode", "World", "run_scenario", "run_step"]
__version__ = "0.1.0"
