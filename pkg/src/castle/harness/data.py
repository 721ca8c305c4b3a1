"""Datasets, CSV I/O, standardization and fold construction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from castle.errors import DataError
from castle.tensor import Rng

log = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass
class Dataset:
    """``xt`` holds the target in column 0 followed by the d features."""

    xt: np.ndarray
    names: list[str]
    task: str = "regression"
    noise: np.ndarray | None = None
    provenance: str = ""
    nodes: list[int | None] | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        self.xt = np.asarray(self.xt, dtype=np.float64)
        if self.xt.ndim != 2 or self.xt.shape[1] != len(self.names):
            raise DataError(f"{len(self.names)} names for data of shape {self.xt.shape}")
        if self.noise is None:
            self.noise = np.zeros(self.xt.shape[1], dtype=bool)
        self.noise = np.asarray(self.noise, dtype=bool)
        if self.task == "classification":
            y = self.xt[:, 0]
            if not np.all((y == 0) | (y == 1)):
                raise DataError("binary targets must be 0 or 1")

    @property
    def n(self) -> int:
        return self.xt.shape[0]

    @property
    def d(self) -> int:
        return self.xt.shape[1] - 1

    def rows(self, idx) -> "Dataset":
        return replace(self, xt=self.xt[idx])


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.names)
        for row in dataset.xt:
            w.writerow([repr(float(v)) for v in row])


def load_csv(path, target_column: str | None = None, task: str = "regression") -> Dataset:
    """Read a headed, comma-separated file; the target moves to column 0.

    Rows with an empty/NA cell are dropped and counted.  Columns whose name
    starts with ``noise`` are flagged as noise variables.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows, dropped = [], 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(raw)}")
            if any(c.strip().lower() in _MISSING for c in raw):
                dropped += 1
                continue
            vals = []
            for col, cell in zip(header, raw):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col!r}: cannot parse {cell!r}") from None
            rows.append(vals)
    target_column = target_column or header[0]
    if target_column not in header:
        raise ValueError(f"target column {target_column!r} not in {path}")
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    t = header.index(target_column)
    order = [t] + [i for i in range(len(header)) if i != t]
    xt = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))[:, order]
    names = [header[i] for i in order]
    noise = np.array([name.lower().startswith("noise") for name in names])
    noise[0] = False
    return Dataset(xt, names, task, noise, provenance=str(path), dropped_rows=dropped)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, xt, task: str = "regression") -> "Standardizer":
        xt = np.asarray(xt, dtype=np.float64)
        if xt.shape[0] == 0:
            raise ValueError("cannot standardize an empty training set")
        mean = xt.mean(axis=0)
        std = xt.std(axis=0)
        std[~(std > 0)] = 1.0
        if task == "classification":
            mean[0], std[0] = 0.0, 1.0
        return cls(mean, std)

    def transform(self, xt) -> np.ndarray:
        return (np.asarray(xt, dtype=np.float64) - self.mean) / self.std

    def target_to_original(self, y) -> np.ndarray:
        return np.asarray(y) * self.std[0] + self.mean[0]


def standardize(train, *others, task: str = "regression"):
    """Fit on ``train`` only and apply to every split; returns (scaler, splits...)."""
    scaler = Standardizer.fit(train, task)
    return (scaler, scaler.transform(train), *(scaler.transform(o) for o in others))


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Disjoint, exhaustive folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    perm = Rng(seed, stream=31).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def train_test_split(n: int, test_fraction: float, seed: int):
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = Rng(seed, stream=32).permutation(n)
    n_test = max(1, int(math.floor(n * test_fraction + 0.5)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
