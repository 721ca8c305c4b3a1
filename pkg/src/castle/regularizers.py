"""Benchmark regularizers that CASTLE is compared against."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from castle.network import NetworkParams, dropout_mask, forward
from castle.tensor import Rng

KINDS = ("baseline", "l1", "l2", "dropout", "input-noise", "mixup", "sae", "castle")

# Hyperparameter grids searched by validation loss.
WEIGHT_DECAY_GRID = (0.1, 0.01, 0.001)
INPUT_NOISE_GRID = (0.1, 0.01)
BETA_GRID = (0.001, 0.01, 0.1, 1.0)
MIXUP_ALPHA = 1.0


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.strength < 1.0:
            raise ValueError(f"drop rate must lie in [0, 1), got {self.strength}")
        if self.strength < 0:
            raise ValueError("regularizer strength must be non-negative")
        if self.kind == "mixup" and self.strength <= 0:
            raise ValueError("MixUp alpha must be positive")


def default_benchmarks() -> dict[str, list[RegularizerSpec]]:
    """Named benchmark -> candidate specs (the grid for that benchmark)."""
    return {
        "baseline": [RegularizerSpec("baseline")],
        "l1": [RegularizerSpec("l1", s) for s in WEIGHT_DECAY_GRID],
        "l2": [RegularizerSpec("l2", s) for s in WEIGHT_DECAY_GRID],
        "dropout0.2": [RegularizerSpec("dropout", 0.2)],
        "dropout0.5": [RegularizerSpec("dropout", 0.5)],
        "input_noise": [RegularizerSpec("input-noise", s) for s in INPUT_NOISE_GRID],
        "mixup": [RegularizerSpec("mixup", MIXUP_ALPHA)],
        "sae": [RegularizerSpec("sae", 1.0)],
        "castle": [RegularizerSpec("castle", b) for b in BETA_GRID],
    }


def _dense_layers(params: NetworkParams, heads=(0,)):
    heads = list(heads)
    yield params.input[heads]
    yield from params.shared
    if params.depth > 2:
        yield params.output[heads]


def weight_decay_penalty(params: NetworkParams, p: int, strength: float, heads=(0,)) -> float:
    """``strength * sum |W|_p^p`` over the dense layers feeding the given heads.

    By default that is the prediction network: the target's input layer, the
    shared layers and the target head.
    """
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    if p == 1:
        return float(strength * sum(np.abs(w).sum() for w in _dense_layers(params, heads)))
    return float(strength * sum((w * w).sum() for w in _dense_layers(params, heads)))


def weight_decay_grad(params: NetworkParams, p: int, strength: float,
                      grads: NetworkParams, heads=(0,)) -> None:
    """Add the weight-decay gradient into ``grads`` in place."""
    heads = list(heads)
    f = np.sign if p == 1 else (lambda w: 2.0 * w)
    grads.input[heads] += strength * f(params.input[heads]) * params.mask[heads][:, :, None]
    for g, w in zip(grads.shared, params.shared):
        g += strength * f(w)
    if params.depth > 2:
        grads.output[heads] += strength * f(params.output[heads])


def dropout_apply(activations, rate: float, rng: Rng, training: bool = True) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop rate must lie in [0, 1), got {rate}")
    activations = np.asarray(activations, dtype=np.float64)
    if not training or rate == 0.0:
        return activations
    return activations * dropout_mask(activations.shape, rate, rng)


def input_noise_apply(x, sigma: float, rng: Rng, columns=None) -> np.ndarray:
    """Add N(0, sigma^2) noise; restricted to ``columns`` when given."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.array(x, dtype=np.float64)
    if sigma == 0.0:
        return x
    if columns is None:
        x += rng.normal(x.shape, 0.0, sigma)
    else:
        cols = list(columns)
        x[:, cols] += rng.normal((x.shape[0], len(cols)), 0.0, sigma)
    return x


def mixup_batch(x, y, alpha: float, rng: Rng, lam: float | None = None):
    """Convex combination of each row with a randomly permuted partner.

    One mixing weight ``lam ~ Beta(alpha, alpha)`` is drawn per batch unless
    given explicitly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("MixUp needs a batch of at least 2 rows")
    if alpha <= 0:
        raise ValueError("MixUp alpha must be positive")
    if lam is None:
        lam = float(rng.beta(alpha, alpha, 1)[0])
    perm = rng.permutation(x.shape[0])
    return lam * x + (1.0 - lam) * x[perm], lam * y + (1.0 - lam) * y[perm]


def sae_loss(params: NetworkParams, xt) -> float:
    """(1/N) |X - f(X)|_F^2 for a network whose sub-networks may see themselves."""
    xt = np.asarray(xt, dtype=np.float64)
    return float(np.sum((xt - forward(params, xt)) ** 2) / xt.shape[0])
