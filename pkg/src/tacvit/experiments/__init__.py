"""Protocol planning, run execution and result aggregation."""

from .report import MetricsReport, aggregate, collect_rows, render_report, write_report
from .runner import (ACCEPTABLE, PROTOCOLS, ExperimentSpec, RunRow, check_hygiene, completed_runs, is_done,
                     normalize_protocol, plan_runs, read_metrics, run_experiment, run_seed, select)

__all__ = [
    "ACCEPTABLE", "PROTOCOLS", "ExperimentSpec", "MetricsReport", "RunRow", "aggregate", "check_hygiene",
    "collect_rows", "completed_runs", "is_done", "normalize_protocol", "plan_runs", "read_metrics",
    "render_report", "run_experiment", "run_seed", "select", "write_report",
]
