"""Scenario-based planning of blind/heating/cooling schedules for a small
multi-zone building whose occupancy is uncertain.

Subpackages:
    building  - RC thermal network, exact discretization, horizon lifting
    sizing    - sample-size rules for the one-shot and incremental schemes
    qp        - strictly convex QP solver with duals and support counting
    engine    - scenario generation, program assembly, experiment drivers
    cli       - command-line front end
"""

__version__ = "0.1.0"

from .building import (
    BuildingConfig,
    BuildingModel,
    LiftedDynamics,
    build_stylized_building,
    lift_dynamics,
    simulate_trajectory,
    step_dynamics,
)
from .engine import (
    ComfortSpec,
    ExperimentConfig,
    ExperimentReport,
    OccupancyModel,
    OccupancyScenario,
    assemble_scenario_program,
    empirical_risk,
    risk_histogram,
    run_deterministic,
    run_incremental,
    run_standard,
    sample_occupancy,
)
from .qp import (
    ScenarioProgram,
    SolveResult,
    active_constraints,
    count_support_constraints,
    count_support_scenarios,
    solve_qp,
)
from .sizing import (
    IncrementalSchedule,
    RiskParams,
    incremental_M_j,
    incremental_N_j,
    incremental_beta_j,
    incremental_schedule,
    log_binomial_tail,
    standard_sample_size_exact,
    standard_sample_size_explicit,
)

__all__ = [
    "BuildingConfig",
    "BuildingModel",
    "LiftedDynamics",
    "build_stylized_building",
    "lift_dynamics",
    "simulate_trajectory",
    "step_dynamics",
    "RiskParams",
    "IncrementalSchedule",
    "log_binomial_tail",
    "standard_sample_size_exact",
    "standard_sample_size_explicit",
    "incremental_M_j",
    "incremental_beta_j",
    "incremental_N_j",
    "incremental_schedule",
    "ScenarioProgram",
    "SolveResult",
    "solve_qp",
    "active_constraints",
    "count_support_constraints",
    "count_support_scenarios",
    "OccupancyModel",
    "OccupancyScenario",
    "ComfortSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "sample_occupancy",
    "assemble_scenario_program",
    "empirical_risk",
    "risk_histogram",
    "run_deterministic",
    "run_standard",
    "run_incremental",
]
