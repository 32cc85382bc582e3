"""Simulation scenarios, truth oracles and the Monte Carlo study runner."""

from .discrete import DiscreteInstance, example_instance, random_instance
from .runner import BOUND_ESTIMATORS, POINT_ESTIMATORS, RunReport, StudyRecord, run_study
from .scenarios import (OracleValue, Scenario, ValuationLaw, World, conditional_surplus,
                        demand_curve, generate, get_scenario, list_scenarios, make_world,
                        oracle_surplus, register, truncated_tail, valuation_support)

__all__ = [
    "BOUND_ESTIMATORS", "DiscreteInstance", "OracleValue", "POINT_ESTIMATORS", "RunReport",
    "Scenario", "StudyRecord", "ValuationLaw", "World", "conditional_surplus", "demand_curve",
    "example_instance", "generate", "get_scenario", "list_scenarios", "make_world",
    "oracle_surplus", "random_instance", "register", "run_study", "truncated_tail",
    "valuation_support",
]
