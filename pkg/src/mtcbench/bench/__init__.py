"""Campaign harness: configuration, Monte Carlo runs, aggregation, reports and the CLI."""
from .campaign import AggregateReport, RunResult, aggregate_runs, run_campaign, run_once, sweep_complexity
from .config import PROFILES, ExperimentConfig, load_config, parse_config
from .report import write_report

__all__ = [
    "ExperimentConfig",
    "PROFILES",
    "load_config",
    "parse_config",
    "RunResult",
    "AggregateReport",
    "run_once",
    "run_campaign",
    "aggregate_runs",
    "sweep_complexity",
    "write_report",
]
