"""Doob-conditioned random walks in variable-width tubes."""

__version__ = "0.1.0"

from .classifier import Regime, RegimeReport, classify, integrate_between, integrate_f
from .errors import (BudgetError, DomainError, DoobTubeError, PreconditionError, ResolutionError,
                     SolverError, StatisticalPowerError, ValidationError)
from .geometry import Point, SectionLadder, WidthProfile, contains, ladder, section_of
from .harmonic import HarmonicField, TubeGrid, build_grid, doob_step_distribution, solve_h
from .simulator import (BatchResult, CouplingResult, PathRecord, run_batch, run_coupled_pair,
                        run_coupling_batch, run_walk)
from .stats import (anticoncentration, clock_convergence, moment_estimate, moment_ratios,
                    start_insensitivity, sup_variance_decay)
from .experiment import (ExperimentReport, Scenario, compare_regimes, dump_scenario,
                         load_scenario, run_experiment)

__all__ = [
    "BatchResult", "BudgetError", "CouplingResult", "DomainError", "DoobTubeError",
    "ExperimentReport", "HarmonicField", "PathRecord", "Point", "PreconditionError", "Regime",
    "RegimeReport", "ResolutionError", "Scenario", "SectionLadder", "SolverError",
    "StatisticalPowerError", "TubeGrid", "ValidationError", "WidthProfile", "anticoncentration",
    "build_grid", "classify", "clock_convergence", "compare_regimes", "contains",
    "doob_step_distribution", "dump_scenario", "integrate_between", "integrate_f", "ladder",
    "load_scenario", "moment_estimate", "moment_ratios", "run_batch", "run_coupled_pair",
    "run_coupling_batch", "run_experiment", "run_walk", "section_of", "solve_h",
    "start_insensitivity", "sup_variance_decay",
]
