"""Platoon merging at a highway on-ramp.

The merging zone is a single exclusive resource. Platoons are sequenced
through it by a weighted completion-time rule, and each leader gets an
analytic trajectory that arrives exactly on schedule. A discrete-time
simulator runs that policy against a stop-and-yield baseline.
"""

from .core import (
    Origin,
    Platoon,
    RoadGeometry,
    ScenarioConfig,
    VehicleState,
    bundled_scenario,
    load_scenario,
    parse_scenario,
    validate_scenario,
)
from .metrics import RunMetrics, compare_runs, compute_metrics
from .scheduler import (
    MergeSchedule,
    ScheduleEntry,
    brute_force_best_sequence,
    build_schedule,
    entry_time,
    exit_time,
    total_weighted_completion,
)
from .simulator import SimulationError, generate_arrivals, run_baseline, run_proposed
from .trajectory import (
    ConstraintViolation,
    PlanKind,
    TrajectoryPlan,
    energy_optimal_plan,
    eval,
    time_optimal_plan,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintViolation", "MergeSchedule", "Origin", "Platoon", "PlanKind",
    "RoadGeometry", "RunMetrics", "ScenarioConfig", "ScheduleEntry",
    "SimulationError", "TrajectoryPlan", "VehicleState", "brute_force_best_sequence",
    "build_schedule", "bundled_scenario", "compare_runs", "compute_metrics",
    "energy_optimal_plan", "entry_time", "eval", "exit_time", "generate_arrivals",
    "load_scenario", "parse_scenario", "run_baseline", "run_proposed",
    "time_optimal_plan", "total_weighted_completion", "validate_scenario",
]
