"""Scores and rank aggregation over the experiment grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from castle.errors import DimensionError, MetricError

MSE = "mse"
AUROC = "auroc"
HIGHER_IS_BETTER = {MSE: False, AUROC: True}


def mse(pred, y) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if pred.shape != y.shape or y.size == 0:
        raise DimensionError(f"prediction/target shapes {pred.shape} vs {y.shape}")
    return float(np.mean((pred - y) ** 2))


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg), ties counted 1/2."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"scores/labels shapes {scores.shape} vs {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    # midranks give the tie-corrected U statistic
    r = rankdata(scores)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    regularizer: str
    fold: int
    metric: str
    score: float
    seconds: float = 0.0


@dataclass
class MetricsTable:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def regularizers(self) -> list[str]:
        return list(dict.fromkeys(r.regularizer for r in self.rows))

    def scores(self, regularizer: str, dataset: str | None = None) -> np.ndarray:
        return np.array([r.score for r in self.rows if r.regularizer == regularizer
                         and (dataset is None or r.dataset == dataset)])

    def mean_score(self, regularizer: str, dataset: str | None = None) -> float:
        return float(self.scores(regularizer, dataset).mean())

    def sorted(self) -> "MetricsTable":
        return MetricsTable(sorted(self.rows, key=lambda r: (r.dataset, r.fold, r.regularizer)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "regularizer", "fold", "metric", "score", "seconds"])
            for r in self.rows:
                w.writerow([r.dataset, r.regularizer, r.fold, r.metric, repr(r.score),
                            f"{r.seconds:.6f}"])

    @classmethod
    def read_csv(cls, path) -> "MetricsTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [MetricRow(r["dataset"], r["regularizer"], int(r["fold"]), r["metric"],
                              float(r["score"]), float(r["seconds"]))
                    for r in csv.DictReader(fh)]
        return cls(rows)


@dataclass(frozen=True)
class RankSummary:
    regularizer: str
    mean: float
    std: float
    cells: int


def rank_cells(table: MetricsTable):
    """Per-(dataset, fold) rank vectors; raises ValueError on a ragged grid."""
    regs = table.regularizers()
    if not regs:
        raise ValueError("empty metrics table")
    cells: dict[tuple[str, int], dict[str, MetricRow]] = {}
    for r in table.rows:
        cell = cells.setdefault((r.dataset, r.fold), {})
        if r.regularizer in cell:
            raise ValueError(f"duplicate row for {r.regularizer} in cell {(r.dataset, r.fold)}")
        cell[r.regularizer] = r
    out = {}
    for key, cell in sorted(cells.items()):
        missing = [g for g in regs if g not in cell]
        if missing:
            raise ValueError(f"incomplete grid: cell {key} lacks {missing}")
        metrics = {cell[g].metric for g in regs}
        if len(metrics) != 1:
            raise ValueError(f"mixed metrics in cell {key}: {sorted(metrics)}")
        metric = metrics.pop()
        s = np.array([cell[g].score for g in regs])
        out[key] = rankdata(-s if HIGHER_IS_BETTER.get(metric, False) else s)
    return regs, out


def average_rank(table: MetricsTable) -> list[RankSummary]:
    """Mean and (population) std of each regularizer's rank across cells.

    Rank 1 is best; ties share the mean of the tied ranks.
    """
    regs, cells = rank_cells(table)
    ranks = np.array(list(cells.values()))
    return [RankSummary(g, float(ranks[:, i].mean()), float(ranks[:, i].std()), ranks.shape[0])
            for i, g in enumerate(regs)]


def write_ranks(summary: list[RankSummary], path, label: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["regularizer", "mean_rank", "std_rank", "cells"]
        w.writerow((["setting"] if label is not None else []) + head)
        for s in summary:
            row = [s.regularizer, repr(s.mean), repr(s.std), s.cells]
            w.writerow(([label] if label is not None else []) + row)
