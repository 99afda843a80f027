"""Scenario files, runs, sweeps and the verification matrix."""

from .runner import RunReport, SweepReport, VerifyRow, run_nsweep, run_scenario, verify_suite
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__all__ = ["RunReport", "Scenario", "ScenarioError", "SweepReport", "VerifyRow",
           "load_scenario", "parse_scenario", "run_nsweep", "run_scenario", "verify_suite"]
