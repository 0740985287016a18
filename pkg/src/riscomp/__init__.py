"""RIS-aided cooperative mobile-edge-computing computation-efficiency solver."""

from .model import (Association, ChannelSet, ConstraintReport, RISProfile,
                    SolutionState, SystemConfig)
from .channelgen import FadingSpec, Geometry, generate_channels, place_network
from .conic import Cone, ConicProgram, SolveReport, armijo_descent, solve_conic
from .driver import (DriverOptions, MODES, SolveResult, SolveTrace,
                     benchmark_solve, solve)
from .downlink_phase import PenaltyParams, min_soc_slack, solve_downlink_phase
from .initializer import find_feasible, violation_objective
from .oracle import am_es_solve, enumerate_associations, grid_phase_oracle

__version__ = "0.1.0"

__all__ = [
    "Association", "ChannelSet", "ConstraintReport", "RISProfile",
    "SolutionState", "SystemConfig", "FadingSpec", "Geometry",
    "generate_channels", "place_network", "Cone", "ConicProgram",
    "SolveReport", "armijo_descent", "solve_conic", "DriverOptions", "MODES",
    "SolveResult", "SolveTrace", "benchmark_solve", "solve", "PenaltyParams",
    "min_soc_slack", "solve_downlink_phase", "find_feasible",
    "violation_objective", "am_es_solve", "enumerate_associations",
    "grid_phase_oracle",
]
