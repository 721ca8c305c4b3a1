"""The cross-validation grid: datasets x regularizers x folds.

Protocol per dataset: a held-out test set is set aside (a freshly sampled
one for synthetic data, a random ``test_fraction`` of rows for CSV data).
The remaining pool is split into ``folds`` folds; in CV iteration ``i`` fold
``i`` is the validation set used for early stopping and model selection and
the other folds are the training set.  Standardization is fitted on the
training rows only.  Every model is scored on the test set.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from castle.analysis import DEFAULT_THRESHOLD, extract_edges, write_edges
from castle.harness.data import Dataset, kfold_split, load_csv, standardize, train_test_split
from castle.harness.metrics import AUROC, MSE, MetricRow, MetricsTable, auroc, average_rank, mse, write_ranks
from castle.harness.training import AUTO, TrainConfig, predict, select_by_validation
from castle.objective import CLASSIFICATION, REGRESSION, adjacency_summary
from castle.regularizers import BETA_GRID, RegularizerSpec, default_benchmarks
from castle.synth import SemSpec, add_noise_vars, gen_dag, random_dag, toy_dag, gen_data
from castle.tensor import Rng

log = logging.getLogger(__name__)

STANDARDIZED = "standardized"
ORIGINAL = "original"


@dataclass
class ExperimentConfig:
    # data: a CSV file, the ten-node toy graph, or random DAGs
    data: str = "toy"
    target_column: str = ""
    task: str = REGRESSION
    n: int = 1000
    test_n: int = 1000
    test_fraction: float = 0.2
    n_dags: int = 1
    nodes: int = 10
    branching: int = 0
    link: str = "sigmoid"
    sigma: float = 0.0
    noise_vars: int = 0
    target_mode: str = "parents"
    # grid
    regularizers: tuple[str, ...] = ("baseline", "l1", "l2", "dropout0.2", "dropout0.5",
                                     "input_noise", "mixup", "sae", "castle")
    lam: float = 1.0
    betas: tuple[float, ...] = BETA_GRID
    folds: int = 10
    max_folds: int = 0
    # training
    epochs: int = 200
    patience: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    depth: int = 3
    width: int = 0
    subsample: str = AUTO
    use_recon: bool = True
    use_acyclic: bool = True
    use_l1: bool = True
    # bookkeeping
    seed: int = 0
    jobs: int = 1
    metric_scale: str = STANDARDIZED
    edge_threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        self.regularizers = tuple(self.regularizers)
        self.betas = tuple(float(b) for b in self.betas)
        if self.folds < 2:
            raise ValueError(f"need folds >= 2, got {self.folds}")
        if not 0 <= self.patience <= self.epochs:
            raise ValueError("patience must lie in [0, epochs]")
        if self.metric_scale not in (STANDARDIZED, ORIGINAL):
            raise ValueError(f"metric_scale must be {STANDARDIZED!r} or {ORIGINAL!r}")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        known = default_benchmarks()
        for name in self.regularizers:
            if name not in known:
                raise ValueError(f"unknown regularizer {name!r}; choose from {sorted(known)}")
        if not self.betas:
            raise ValueError("beta grid must not be empty")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def train_config(self, seed: int) -> TrainConfig:
        sub = self.subsample
        if sub not in (AUTO, None):
            sub = None if str(sub).lower() in ("none", "off", "0") else int(sub)
        return TrainConfig(lam=self.lam, lr=self.lr, epochs=self.epochs, patience=self.patience,
                           batch_size=self.batch_size, subsample=sub, task=self.task,
                           depth=self.depth, width=self.width or None, seed=seed,
                           use_recon=self.use_recon, use_acyclic=self.use_acyclic,
                           use_l1=self.use_l1)

    def candidates(self, name: str) -> list[RegularizerSpec]:
        if name == "castle":
            return [RegularizerSpec("castle", b) for b in self.betas]
        return default_benchmarks()[name]


def _coerce(tp, text: str):
    tp = str(tp)
    text = text.strip()
    if tp.startswith("tuple"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(float(t) for t in items) if "float" in tp else tuple(items)
    if tp == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp == "int":
        return int(text)
    if tp == "float":
        return float(text)
    return text


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors.

    ``overrides`` (already typed) take precedence over the file.
    """
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(types[key], val)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ValueError(f"unknown key {key!r}")
        values[key] = val
    return ExperimentConfig(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


@dataclass
class Prepared:
    name: str
    pool: Dataset
    test: Dataset
    truth: object = None


def prepare_datasets(cfg: ExperimentConfig) -> list[Prepared]:
    """Build (pool, test) pairs deterministically from ``cfg.seed``."""
    out = []
    if cfg.data not in ("toy", "random"):
        ds = load_csv(cfg.data, cfg.target_column or None, cfg.task)
        train_idx, test_idx = train_test_split(ds.n, cfg.test_fraction, cfg.seed)
        return [Prepared(Path(cfg.data).stem, ds.rows(train_idx), ds.rows(test_idx))]
    sem = SemSpec(sigma=cfg.sigma or None, link=cfg.link)
    for i in range(cfg.n_dags):
        rng = Rng(cfg.seed, 100 + i)
        if cfg.data == "toy":
            dag = toy_dag()
        elif cfg.branching > 0:
            dag = gen_dag(cfg.nodes, cfg.branching, rng, cfg.target_mode)
        else:
            dag = random_dag(cfg.nodes, rng, cfg.target_mode)
        full = gen_data(dag, sem, cfg.n + cfg.test_n, rng)
        full = add_noise_vars(full, cfg.noise_vars, rng)
        idx = np.arange(full.n)
        out.append(Prepared(f"{cfg.data}{i}", full.rows(idx[: cfg.n]), full.rows(idx[cfg.n :]), dag))
    return out


def cell_seed(master: int, dataset_index: int, fold: int) -> int:
    """Training seed shared by every regularizer in one (dataset, fold) cell."""
    return int(Rng(master, 1000 + dataset_index).next_u64(fold + 1)[fold] >> 33)


@dataclass
class CellResult:
    row: MetricRow
    history: list
    edges: list
    names: list
    extra: dict = field(default_factory=dict)


def run_cell(cfg: ExperimentConfig, prep: Prepared, di: int, fold: int, folds, reg_name: str) -> CellResult:
    t0 = time.perf_counter()
    val_idx = folds[fold]
    train_idx = np.concatenate([f for j, f in enumerate(folds) if j != fold])
    pool = prep.pool.xt
    scaler, tr, va, te = standardize(pool[train_idx], pool[val_idx], prep.test.xt, task=cfg.task)
    tcfg = cfg.train_config(cell_seed(cfg.seed, di, fold))
    res = select_by_validation(tr, va, cfg.candidates(reg_name), tcfg)
    out = predict(res.params, te)
    if cfg.task == CLASSIFICATION:
        score, metric = auroc(out, te[:, 0]), AUROC
    elif cfg.metric_scale == ORIGINAL:
        score, metric = mse(scaler.target_to_original(out), prep.test.xt[:, 0]), MSE
    else:
        score, metric = mse(out, te[:, 0]), MSE
    seconds = time.perf_counter() - t0
    row = MetricRow(prep.name, reg_name, fold, metric, float(score), seconds)
    edges = extract_edges(adjacency_summary(res.params), cfg.edge_threshold)
    return CellResult(row, res.history, edges, prep.pool.names,
                      {"strength": res.reg.strength, "best_epoch": res.best_epoch,
                       "params": res.params})


@dataclass
class ExperimentResult:
    table: MetricsTable
    cells: dict
    datasets: list


def run_experiment(cfg: ExperimentConfig, out_dir=None, keep_params: bool = False) -> ExperimentResult:
    """Run the full grid; optionally write artifacts under ``out_dir``.

    Results are merged in (dataset, fold, regularizer) order, so the table
    does not depend on ``cfg.jobs``.
    """
    preps = prepare_datasets(cfg)
    jobs = []
    for di, prep in enumerate(preps):
        folds = kfold_split(prep.pool.n, cfg.folds, cfg.seed + di)
        n_run = cfg.folds if cfg.max_folds <= 0 else min(cfg.folds, cfg.max_folds)
        for fold in range(n_run):
            for reg in cfg.regularizers:
                jobs.append((di, fold, reg, folds))

    def work(job):
        di, fold, reg, folds = job
        return run_cell(cfg, preps[di], di, fold, folds, reg)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    cells = {}
    for (di, fold, reg, _), res in zip(jobs, results):
        if not keep_params:
            res.extra.pop("params", None)
        cells[(preps[di].name, fold, reg)] = res
    table = MetricsTable([cells[k].row for k in sorted(cells)])
    result = ExperimentResult(table, cells, preps)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def cell_name(key) -> str:
    dataset, fold, reg = key
    return f"{dataset}_{reg}_fold{fold}"


def write_artifacts(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    (out / "history").mkdir(parents=True, exist_ok=True)
    (out / "edges").mkdir(parents=True, exist_ok=True)
    result.table.write_csv(out / "metrics.csv")
    write_ranks(average_rank(result.table), out / "ranks.csv")
    for key in sorted(result.cells):
        cell = result.cells[key]
        with open(out / "history" / f"{cell_name(key)}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, tr, va in cell.history:
                w.writerow([epoch, repr(float(tr)), repr(float(va))])
        write_edges(out / "edges" / f"{cell_name(key)}.txt", cell.edges, cell.names)


SWEEPABLE = ("lam", "beta")


def run_sweep(cfg: ExperimentConfig, param: str, values, out_dir=None) -> dict:
    """One rank table per swept value of CASTLE's lam or beta.

    The benchmark cells do not depend on the swept value, so they are run
    once and shared by every setting.
    """
    if param not in SWEEPABLE:
        raise ValueError(f"can only sweep {SWEEPABLE}, got {param!r}")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no sweep values")
    others = tuple(r for r in cfg.regularizers if r != "castle")
    base = run_experiment(replace(cfg, regularizers=others)) if others else None
    out = {}
    for v in values:
        sub = replace(cfg, regularizers=("castle",), **({"lam": v} if param == "lam" else {"betas": (v,)}))
        res = run_experiment(sub)
        rows = list(res.table.rows) + (list(base.table.rows) if base else [])
        table = MetricsTable(sorted(rows, key=lambda r: (r.dataset, r.fold, r.regularizer)))
        out[v] = (table, average_rank(table))
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "sweep_ranks.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([param, "regularizer", "mean_rank", "std_rank", "cells"])
            for v in values:
                for s in out[v][1]:
                    w.writerow([repr(v), s.regularizer, repr(s.mean), repr(s.std), s.cells])
        for v in values:
            out[v][0].write_csv(d / f"metrics_{param}_{v!r}.csv")
            write_ranks(out[v][1], d / f"ranks_{param}_{v!r}.csv", label=f"{param}={v!r}")
    return out
