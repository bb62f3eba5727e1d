"""Metrics, file formats, experiment orchestration and the command-line interface."""

from .config import ExperimentConfig, desk_config, paper_config, preset_config
from .metrics import nrmse, ssim
from .pipeline import Experiment, MetricsRecord, run_ablation, run_pipeline, run_sweep

__all__ = [
    "Experiment",
    "ExperimentConfig",
    "MetricsRecord",
    "desk_config",
    "nrmse",
    "paper_config",
    "preset_config",
    "run_ablation",
    "run_pipeline",
    "run_sweep",
    "ssim",
]
