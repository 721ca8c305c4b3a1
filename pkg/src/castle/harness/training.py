"""Mini-batch Adam training with early stopping for every regularizer kind."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from castle.errors import NumericError
from castle.harness.data import Dataset, Standardizer, standardize, train_test_split
from castle.network import Adam, NetworkParams, NetworkShape, castle_mask, forward, init_params, sae_mask
from castle.objective import REGRESSION, LossSpec, backward, prediction_loss, subsample_columns
from castle.regularizers import RegularizerSpec, input_noise_apply, mixup_batch
from castle.tensor import Rng

log = logging.getLogger(__name__)

# Rng stream ids, one per source of randomness
STREAM_INIT, STREAM_SHUFFLE, STREAM_DROPOUT, STREAM_NOISE, STREAM_MIXUP, STREAM_SUBSAMPLE = range(6)

AUTO = "auto"
AUTO_SUBSAMPLE_ABOVE = 64
AUTO_SUBSAMPLE_COUNT = 32


@dataclass
class TrainConfig:
    lam: float = 1.0
    beta: float = 0.01
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 30
    batch_size: int = 32
    subsample: int | str | None = AUTO
    task: str = REGRESSION
    depth: int = 3
    width: int | None = None
    seed: int = 0
    use_recon: bool = True
    use_acyclic: bool = True
    use_l1: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.patience <= self.epochs:
            raise ValueError("patience must lie in [0, epochs]")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.subsample not in (None, AUTO) and int(self.subsample) < 1:
            raise ValueError("sub-sample count must be >= 1")

    def subsample_count(self, d: int) -> int | None:
        if self.subsample == AUTO:
            return min(d, AUTO_SUBSAMPLE_COUNT) if d > AUTO_SUBSAMPLE_ABOVE else None
        if self.subsample is None:
            return None
        return min(int(self.subsample), d)


@dataclass
class TrainResult:
    params: NetworkParams
    reg: RegularizerSpec
    best_epoch: int
    val_loss: float
    history: list[tuple[int, float, float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)


def loss_spec_for(reg: RegularizerSpec, cfg: TrainConfig) -> LossSpec:
    """The objective each regularizer kind optimizes."""
    if reg.kind == "castle":
        return LossSpec(lam=cfg.lam, beta=reg.strength, task=cfg.task, use_recon=cfg.use_recon,
                        use_acyclic=cfg.use_acyclic, use_l1=cfg.use_l1)
    if reg.kind == "sae":
        return LossSpec(lam=reg.strength, task=cfg.task, use_acyclic=False, use_l1=False)
    if reg.kind == "l1":
        return LossSpec(lam=0.0, task=cfg.task, weight_decay=(1, reg.strength))
    if reg.kind == "l2":
        return LossSpec(lam=0.0, task=cfg.task, weight_decay=(2, reg.strength))
    return LossSpec(lam=0.0, task=cfg.task)


def predict(params: NetworkParams, xt) -> np.ndarray:
    """Target-head output: a prediction for regression, a logit for classification."""
    return forward(params, xt, [0])[:, 0]


def _batches(n: int, size: int, rng: Rng):
    bs = n if n < 64 else size
    order = rng.permutation(n)
    for start in range(0, n, bs):
        yield order[start : start + bs]


def train_model(train_xt, val_xt, reg: RegularizerSpec, cfg: TrainConfig) -> TrainResult:
    """Train one network; keep the snapshot with the lowest validation loss.

    Early stopping watches only the validation prediction loss.  Training
    stops after ``cfg.patience`` epochs without strict improvement.
    """
    train_xt = np.asarray(train_xt, dtype=np.float64)
    val_xt = np.asarray(val_xt, dtype=np.float64)
    d = train_xt.shape[1] - 1
    mask = sae_mask(d + 1) if reg.kind == "sae" else castle_mask(d + 1)
    params = init_params(NetworkShape(d, cfg.depth, cfg.width), Rng(cfg.seed, STREAM_INIT), mask)
    opt = Adam(params, lr=cfg.lr)
    spec = loss_spec_for(reg, cfg)
    sub_count = cfg.subsample_count(d) if reg.kind == "castle" and spec.dag_active else None

    shuffle_rng = Rng(cfg.seed, STREAM_SHUFFLE)
    drop_rng = Rng(cfg.seed, STREAM_DROPOUT)
    noise_rng = Rng(cfg.seed, STREAM_NOISE)
    mix_rng = Rng(cfg.seed, STREAM_MIXUP)
    sub_rng = Rng(cfg.seed, STREAM_SUBSAMPLE)
    rate = reg.strength if reg.kind == "dropout" else 0.0
    features = range(1, d + 1)

    best, best_epoch, best_params, since = np.inf, -1, params.copy(), 0
    history, seconds = [], []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for idx in _batches(train_xt.shape[0], cfg.batch_size, shuffle_rng):
            batch = train_xt[idx]
            if reg.kind == "input-noise":
                batch = input_noise_apply(batch, reg.strength, noise_rng, features)
            elif reg.kind == "mixup" and batch.shape[0] >= 2:
                mixed, _ = mixup_batch(batch, batch[:, 0], reg.strength, mix_rng)
                batch = mixed
            step_spec = spec
            if sub_count is not None:
                step_spec = replace(spec, subsample=tuple(subsample_columns(d, sub_count, sub_rng)))
            value, grads = backward(params, batch, step_spec, dropout=rate, rng=drop_rng)
            if not np.isfinite(value):
                raise NumericError(f"training loss is not finite at epoch {epoch}")
            opt.step(params, grads)
            total += value * batch.shape[0]
            count += batch.shape[0]
        val = prediction_loss(predict(params, val_xt), val_xt[:, 0], cfg.task)
        if not np.isfinite(val):
            raise NumericError(f"validation loss is not finite at epoch {epoch}")
        seconds.append(time.perf_counter() - t0)
        history.append((epoch, total / count, val))
        if val < best:
            best, best_epoch, best_params, since = val, epoch, params.copy(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    log.debug("%s(%g): best epoch %d, val %.6g", reg.kind, reg.strength, best_epoch, best)
    return TrainResult(best_params, reg, best_epoch, float(best), history, seconds)


def select_by_validation(train_xt, val_xt, candidates, cfg: TrainConfig) -> TrainResult:
    """Train each candidate spec and keep the lowest validation loss (first wins ties)."""
    best = None
    for reg in candidates:
        res = train_model(train_xt, val_xt, reg, cfg)
        if best is None or res.val_loss < best.val_loss:
            best = res
    if best is None:
        raise ValueError("no candidate regularizers")
    return best



def train_dataset(dataset: Dataset, reg: RegularizerSpec, cfg: TrainConfig,
                  val_fraction: float = 0.2) -> tuple[TrainResult, Standardizer]:
    """Hold out ``val_fraction`` of the rows for early stopping and train on the rest.

    The fitted standardization is stored in ``result.params.meta`` so that a
    saved checkpoint can be applied to raw data later.
    """
    train_idx, val_idx = train_test_split(dataset.n, val_fraction, cfg.seed)
    scaler, tr, va = standardize(dataset.xt[train_idx], dataset.xt[val_idx], task=cfg.task)
    res = train_model(tr, va, reg, cfg)
    res.params.meta.update({
        "mean": scaler.mean.tolist(),
        "std": scaler.std.tolist(),
        "task": cfg.task,
        "names": list(dataset.names),
        "regularizer": reg.kind,
        "strength": reg.strength,
    })
    return res, scaler
