"""Optimisation, evaluation and experiment harnesses."""

from .finetune import StabilityTrace, evaluate, finetune, predict, probe_norms
from .metrics import MetricsReport, compute_metrics
from .optim import AdamW, TrainConfig, lr_schedule

__all__ = [
    "AdamW", "MetricsReport", "StabilityTrace", "TrainConfig", "compute_metrics", "evaluate",
    "finetune", "lr_schedule", "predict", "probe_norms",
]
