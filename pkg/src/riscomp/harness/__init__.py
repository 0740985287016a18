from .experiments import (EXPERIMENTS, ExperimentSpec, ResultTable, Row,
                          default_spec, emit_results, run_experiment)
from .config_io import desk_config, load_spec, paper_config

__all__ = ["EXPERIMENTS", "ExperimentSpec", "ResultTable", "Row",
           "default_spec", "emit_results", "run_experiment", "desk_config",
           "load_spec", "paper_config"]
