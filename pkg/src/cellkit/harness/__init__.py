"""Experiment runner: the looped task, MTUI statistics and reports."""
from cellkit.harness.executor import Executor
from cellkit.harness.experiment import (ExperimentConfig, ExperimentResult, LiveStack, RunResult, SimStack, TaskLoop,
                                        config_from_dict, load_config, run_experiment, validate_config)
from cellkit.harness.mtui import (LogOrderError, MTUIReport, compute_mtui, merge_reports, superposition_mean,
                                  windowed_mean)

__all__ = [
    "Executor", "ExperimentConfig", "ExperimentResult", "LiveStack", "LogOrderError", "MTUIReport", "RunResult",
    "SimStack", "TaskLoop", "compute_mtui", "config_from_dict", "load_config", "merge_reports", "run_experiment",
    "superposition_mean", "validate_config", "windowed_mean",
]
