"""Config-driven experiment runner: train on nominal, evaluate across a sweep, report."""
from .config import ExperimentConfig, load_config, parse_config
from .report import AggregateReport, Cell, ReportError, aggregate, compare, format_table
from .runner import OutputError, run_experiment, run_seed

run = run_experiment

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "AggregateReport",
    "Cell",
    "ReportError",
    "aggregate",
    "compare",
    "format_table",
    "OutputError",
    "run",
    "run_experiment",
    "run_seed",
]
