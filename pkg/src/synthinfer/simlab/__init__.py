"""Monte Carlo experiments for combining rules on synthetic data."""
from __future__ import annotations

from .experiment import (ConfigError, ExperimentConfig, ExperimentError, MetricsTable, aggregate,
                         load_config, read_config, run_experiment, run_replication)
from .generators import GENERATORS, SCHEMAS, Truths, gen_sim1, gen_sim2, gen_sim3
from .metrics import metric_bias, metric_coverage, metric_rab, monte_carlo_variance
from .report import load_metrics, write_report

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentError", "MetricsTable", "aggregate", "load_config",
    "read_config", "run_experiment", "run_replication", "GENERATORS", "SCHEMAS", "Truths", "gen_sim1",
    "gen_sim2", "gen_sim3", "metric_bias", "metric_coverage", "metric_rab", "monte_carlo_variance",
    "load_metrics", "write_report",
]
