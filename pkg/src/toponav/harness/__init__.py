"""Metrics, experiment configuration, experiment runners and reports."""
from .config import EXPERIMENTS, WORKSPACE_ENV, ConfigError, ExperimentConfig, workspace_dir
from .experiments import (
    Arm,
    Condition,
    ExperimentError,
    arms_for,
    conditions_for,
    eval_suite,
    evaluate,
    run_experiment,
    train_arm,
)
from .metrics import Metrics, compute_metrics, spl, success_rate
from .report import bar_plot, deltas, line_plot, summarize, write_report
