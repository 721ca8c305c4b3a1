"""The CASTLE training objective and its analytic gradient.

    J = pred(Y, f_0) + lam * (L_N + R + beta * V)

``L_N`` is the (1/N) squared reconstruction error over the reconstructed
columns, ``R = (tr exp(M∘M) - K)^2`` with ``M[k, j]`` the l2 norm of row k of
sub-network j's input matrix, and ``V`` the l1 norm of all input matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from castle.errors import DataError, DimensionError, NumericError
from castle.network import NetworkParams, backprop, forward, forward_cached
from castle.regularizers import weight_decay_grad, weight_decay_penalty
from castle.tensor import Rng, mat_exp

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASKS = (REGRESSION, CLASSIFICATION)


@dataclass
class LossSpec:
    lam: float = 1.0
    beta: float = 0.01
    subsample: tuple[int, ...] | None = None
    task: str = REGRESSION
    use_recon: bool = True
    use_acyclic: bool = True
    use_l1: bool = True
    weight_decay: tuple[int, float] | None = None

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.subsample is not None:
            self.subsample = tuple(int(c) for c in self.subsample)
            if len(self.subsample) == 0:
                raise ValueError("subsample must not be empty")

    @property
    def dag_active(self) -> bool:
        return self.lam > 0 and (self.use_recon or self.use_acyclic or self.use_l1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_labels(y):
    if not np.all((y == 0) | (y == 1)):
        raise DataError("classification labels must be 0 or 1")


def prediction_loss(pred_y, y, task: str = REGRESSION) -> float:
    """Mean squared error, or mean binary cross-entropy on logits."""
    pred_y = np.asarray(pred_y, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if pred_y.shape != y.shape or y.size == 0:
        raise DimensionError(f"prediction/target shapes {pred_y.shape} vs {y.shape}")
    if task == CLASSIFICATION:
        _check_labels(y)
        return float(np.mean(np.logaddexp(0.0, pred_y) - y * pred_y))
    return float(np.mean((y - pred_y) ** 2))


def _prediction_value(pred_y, y, task):
    # unchecked: MixUp feeds soft labels
    if task == CLASSIFICATION:
        return float(np.mean(np.logaddexp(0.0, pred_y) - y * pred_y))
    return float(np.mean((y - pred_y) ** 2))


def _prediction_grad(pred_y, y, task):
    n = y.shape[0]
    if task == CLASSIFICATION:
        return (_sigmoid(pred_y) - y) / n
    return -2.0 * (y - pred_y) / n


def reconstruction_loss(pred, xt, subsample=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if pred.shape != xt.shape:
        raise DimensionError(f"reconstruction shapes {pred.shape} vs {xt.shape}")
    if subsample is not None:
        cols = list(subsample)
        if not cols:
            raise ValueError("subsample must not be empty")
        pred, xt = pred[:, cols], xt[:, cols]
    return float(np.sum((xt - pred) ** 2) / xt.shape[0])


def adjacency_summary(params: NetworkParams) -> np.ndarray:
    """``M[k, j]`` = l2 norm of row k of sub-network j's input matrix."""
    return np.sqrt(np.sum(params.input**2, axis=2)).T


def acyclicity_penalty(msum: np.ndarray) -> float:
    msum = np.asarray(msum, dtype=np.float64)
    if msum.ndim != 2 or msum.shape[0] != msum.shape[1]:
        raise DimensionError(f"adjacency summary must be square, got {msum.shape}")
    e = mat_exp(msum * msum)
    value = (np.trace(e) - msum.shape[0]) ** 2
    if not np.isfinite(value):
        raise NumericError("acyclicity penalty is not finite")
    return float(value)


def _acyclicity_and_grad(params: NetworkParams):
    # M∘M is the row sum of squares; d/dW1[j][k,h] = 4 (tr - K) E[j, k] W1[j][k,h]
    sq = np.sum(params.input**2, axis=2).T
    e = mat_exp(sq)
    gap = np.trace(e) - params.n_vars
    value = gap * gap
    if not np.isfinite(value):
        raise NumericError("acyclicity penalty is not finite")
    grad = 4.0 * gap * e[:, :, None] * params.input
    return float(value), grad


def input_l1(params: NetworkParams) -> float:
    return float(np.abs(params.input).sum())


def subsample_columns(d: int, count: int, rng: Rng) -> np.ndarray:
    """``count`` distinct feature columns drawn uniformly from 1..d (sorted)."""
    if not 1 <= count <= d:
        raise ValueError(f"sub-sample count must lie in [1, {d}], got {count}")
    return np.sort(rng.choice(d, count) + 1)


def recon_columns(spec: LossSpec, n_vars: int) -> np.ndarray:
    cols = np.arange(n_vars) if spec.subsample is None else np.array(
        sorted({0, *spec.subsample}), dtype=np.int64)
    if spec.task == CLASSIFICATION:
        cols = cols[cols != 0]
    return cols


def _heads(spec: LossSpec, n_vars: int) -> np.ndarray:
    if spec.lam > 0 and spec.use_recon:
        return np.union1d([0], recon_columns(spec, n_vars)).astype(np.int64)
    return np.array([0], dtype=np.int64)


def castle_objective(params: NetworkParams, xt, spec: LossSpec) -> float:
    xt = np.asarray(xt, dtype=np.float64)
    heads = _heads(spec, params.n_vars)
    out = np.zeros_like(xt)
    out[:, heads] = forward(params, xt, heads)
    total = prediction_loss(out[:, 0], xt[:, 0], spec.task)
    if spec.lam > 0:
        dag = 0.0
        if spec.use_recon:
            cols = recon_columns(spec, params.n_vars)
            if cols.size:
                dag += reconstruction_loss(out, xt, cols)
        if spec.use_acyclic:
            dag += acyclicity_penalty(adjacency_summary(params))
        if spec.use_l1:
            dag += spec.beta * input_l1(params)
        total += spec.lam * dag
    if spec.weight_decay is not None:
        p, strength = spec.weight_decay
        total += weight_decay_penalty(params, p, strength)
    return float(total)


def backward(params: NetworkParams, xt, spec: LossSpec, dropout: float = 0.0,
             rng: Rng | None = None):
    """Objective value and its exact gradient, as a ``NetworkParams``.

    Masked coordinates always receive a zero gradient.
    """
    xt = np.asarray(xt, dtype=np.float64)
    heads = _heads(spec, params.n_vars)
    cache = forward_cached(params, xt, heads, dropout=dropout, rng=rng)
    out = cache.out
    n = xt.shape[0]
    y = xt[:, 0]
    value = _prediction_value(out[:, 0], y, spec.task)
    gout = np.zeros_like(out)
    gout[:, 0] = _prediction_grad(out[:, 0], y, spec.task)

    extra_input = None
    if spec.lam > 0:
        lam = spec.lam
        if spec.use_recon:
            cols = recon_columns(spec, params.n_vars)
            pos = np.searchsorted(heads, cols)
            resid = xt[:, cols] - out[:, pos]
            value += lam * float(np.sum(resid**2) / n)
            gout[:, pos] += -2.0 * lam * resid / n
        if spec.use_acyclic:
            r, g_r = _acyclicity_and_grad(params)
            value += lam * r
            extra_input = lam * g_r
        if spec.use_l1:
            value += lam * spec.beta * input_l1(params)
            g_l1 = lam * spec.beta * np.sign(params.input)
            extra_input = g_l1 if extra_input is None else extra_input + g_l1

    grads = backprop(params, cache, gout)
    if extra_input is not None:
        grads.input += extra_input * params.mask[:, :, None]
    if spec.weight_decay is not None:
        p, strength = spec.weight_decay
        value += weight_decay_penalty(params, p, strength)
        weight_decay_grad(params, p, strength, grads)
    return float(value), grads


@dataclass
class LinearFitOptions:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    patience: int = 30
    seed: int = 0
    task: str = REGRESSION
    validation: np.ndarray | None = None
    history: list = field(default_factory=list)


def linear_objective(w, xt, lam, beta, task=REGRESSION) -> float:
    """(1/N)|Y - X W[:,0]|^2 + lam (|X - XW|_F^2 / N + (tr e^{W∘W} - K)^2 + beta |W|_1)."""
    xt = np.asarray(xt, dtype=np.float64)
    pred = xt @ w
    value = prediction_loss(pred[:, 0], xt[:, 0], task)
    if lam > 0:
        value += lam * (reconstruction_loss(pred, xt) + acyclicity_penalty(np.abs(w))
                        + beta * np.abs(w).sum())
    return float(value)


def _linear_grad(w, xt, lam, beta, task):
    n, K = xt.shape
    pred = xt @ w
    g_pred = np.zeros_like(pred)
    g_pred[:, 0] = _prediction_grad(pred[:, 0], xt[:, 0], task)
    grad_rest = 0.0
    if lam > 0:
        g_pred += -2.0 * lam * (xt - pred) / n
        e = mat_exp(w * w)
        gap = np.trace(e) - K
        grad_rest = lam * (2.0 * gap * e.T * 2.0 * w + beta * np.sign(w))
    grad = xt.T @ g_pred + grad_rest
    np.fill_diagonal(grad, 0.0)
    return grad


def linear_castle_fit(xt, lam: float = 1.0, beta: float = 0.01,
                      opts: LinearFitOptions | None = None) -> np.ndarray:
    """Linear CASTLE by mini-batch Adam; the diagonal of W stays zero.

    With ``opts.validation`` set, training stops after ``opts.patience``
    epochs without improvement of the validation prediction loss and the best
    W is returned.
    """
    opts = opts or LinearFitOptions()
    xt = np.asarray(xt, dtype=np.float64)
    n, K = xt.shape
    rng = Rng(opts.seed, stream=11)
    w = np.zeros((K, K))
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    best, best_w, since = np.inf, w.copy(), 0
    bs = n if n < 64 else opts.batch_size
    for epoch in range(opts.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = xt[order[start : start + bs]]
            g = _linear_grad(w, batch, lam, beta, opts.task)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"linear fit diverged at epoch {epoch}")
            t += 1
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= opts.lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            np.fill_diagonal(w, 0.0)
        loss = linear_objective(w, xt, lam, beta, opts.task)
        if not np.isfinite(loss):
            raise NumericError(f"linear fit loss is not finite at epoch {epoch}")
        if opts.validation is not None:
            val = prediction_loss(opts.validation @ w[:, 0], opts.validation[:, 0], opts.task)
            opts.history.append((epoch, loss, val))
            if val < best:
                best, best_w, since = val, w.copy(), 0
            else:
                since += 1
                if since >= opts.patience:
                    break
        else:
            opts.history.append((epoch, loss, None))
            best_w = w
    return best_w.copy()
