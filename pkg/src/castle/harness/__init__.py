"""Experiment orchestration: data handling, training, metrics and the CV grid."""

from castle.harness.data import (
    Dataset,
    Standardizer,
    kfold_split,
    load_csv,
    save_csv,
    standardize,
    train_test_split,
)
from castle.harness.metrics import MetricRow, MetricsTable, auroc, average_rank, mse

__all__ = [
    "Dataset",
    "MetricRow",
    "MetricsTable",
    "Standardizer",
    "auroc",
    "average_rank",
    "kfold_split",
    "load_csv",
    "mse",
    "save_csv",
    "standardize",
    "train_test_split",
]
