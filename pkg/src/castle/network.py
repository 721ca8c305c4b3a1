"""Shared-hidden-layer ReLU network with one masked input layer per variable.

For ``K = d + 1`` variables (column 0 is the target) the network holds

* ``input``  ``(K, K, h)``: ``input[k]`` is the input matrix of sub-network
  ``k``; row ``j`` carries the fan-out of variable ``j``.
* ``shared`` list of ``depth - 2`` matrices ``(h, h)`` used by every
  sub-network.
* ``output`` ``(K, h)``: row ``k`` is the output column of sub-network ``k``.
* ``mask``   ``(K, K)``: ``mask[k, j] == 0`` zeroes row ``j`` of ``input[k]``.

Sub-network ``k`` computes ``relu(...relu(relu(X @ W1[k]) @ W2)...) @ out[k]``.
With ``depth == 2`` there are no hidden activations and the output columns
are fixed to ones, which makes the model the linear map ``X @ W``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from castle.errors import DimensionError, NumericError
from castle.tensor import Rng

CHECKPOINT_MAGIC = b"CASTLEv1"
CHECKPOINT_VERSION = 1

_CHUNK_ELEMS = 1 << 23


@dataclass(frozen=True)
class NetworkShape:
    d: int
    depth: int = 3
    width: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"need at least one feature, got d={self.d}")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.width is not None and self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")

    @property
    def n_vars(self) -> int:
        return self.d + 1

    @property
    def h(self) -> int:
        return self.width if self.width is not None else self.d + 1


def castle_mask(n_vars: int) -> np.ndarray:
    """Sub-network k never sees variable k."""
    return 1.0 - np.eye(n_vars)


def sae_mask(n_vars: int) -> np.ndarray:
    """Every sub-network sees every feature, itself included, but never the target."""
    m = np.ones((n_vars, n_vars))
    m[:, 0] = 0.0
    return m


@dataclass
class NetworkParams:
    input: np.ndarray
    shared: list[np.ndarray]
    output: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.input.shape[0]

    @property
    def d(self) -> int:
        return self.n_vars - 1

    @property
    def h(self) -> int:
        return self.input.shape[2]

    @property
    def depth(self) -> int:
        return len(self.shared) + 2

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(self.d, self.depth, self.h)

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        out = [("input", self.input)]
        out += [(f"shared{i}", w) for i, w in enumerate(self.shared)]
        out.append(("output", self.output))
        return out

    def apply_mask(self) -> None:
        self.input *= self.mask[:, :, None]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.input.copy(),
            [w.copy() for w in self.shared],
            self.output.copy(),
            self.mask.copy(),
            dict(self.meta),
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            np.zeros_like(self.input),
            [np.zeros_like(w) for w in self.shared],
            np.zeros_like(self.output),
            self.mask,
            {},
        )


def init_params(shape: NetworkShape, rng: Rng, mask: np.ndarray | None = None) -> NetworkParams:
    """Glorot-uniform weights, masked so that sub-network k ignores variable k.

    Each input variable fans out to ``K * h`` hidden units (h in every
    sub-network), so the stacked input layer uses fan_in ``K`` and fan_out
    ``K * h``; this keeps the entries of ``M∘M`` near ``2 / K`` at init.
    Draw order is input, shared layers, output; masked entries are drawn and
    then zeroed so that different masks share the same random weights.
    """
    K, h = shape.n_vars, shape.h
    if mask is None:
        mask = castle_mask(K)
    if mask.shape != (K, K):
        raise DimensionError(f"mask shape {mask.shape} does not match {K} variables")

    def glorot(n_in, n_out, size):
        b = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(int(np.prod(size)), -b, b).reshape(size)

    w_in = glorot(K, K * h, (K, K, h))
    shared = [glorot(h, h, (h, h)) for _ in range(shape.depth - 2)]
    if shape.depth == 2:
        out = np.ones((K, h))
    else:
        out = glorot(h, 1, (K, h))
    params = NetworkParams(w_in, shared, out, np.array(mask, dtype=np.float64))
    params.apply_mask()
    return params


def dropout_mask(shape, rate: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.uniform(int(np.prod(shape))).reshape(shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class ForwardCache:
    heads: np.ndarray
    xt: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    drop: list[np.ndarray | None]
    out: np.ndarray


def _check_input(params: NetworkParams, xt: np.ndarray) -> np.ndarray:
    xt = np.asarray(xt, dtype=np.float64)
    if xt.ndim != 2 or xt.shape[1] != params.n_vars:
        raise DimensionError(
            f"expected data with {params.n_vars} columns, got shape {xt.shape}"
        )
    return xt


def forward_cached(
    params: NetworkParams,
    xt: np.ndarray,
    heads=None,
    dropout: float = 0.0,
    rng: Rng | None = None,
) -> ForwardCache:
    """Forward pass for the selected sub-networks, keeping what backprop needs.

    Activations are laid out ``(N, S, h)`` for ``S`` selected heads so every
    layer is a single matrix product.  ``dropout`` (inverted, training only)
    is applied after every hidden activation; it needs ``rng`` when positive.
    """
    xt = _check_input(params, xt)
    heads = np.arange(params.n_vars) if heads is None else np.asarray(heads, dtype=np.int64)
    n, s, h = xt.shape[0], len(heads), params.h
    w_in = params.input[heads].transpose(1, 0, 2).reshape(params.n_vars, s * h)
    z = (xt @ w_in).reshape(n, s, h)
    pre, post, drop = [], [], []
    if params.depth == 2:
        return ForwardCache(heads, xt, [z], [], [], z.sum(axis=2))
    for i in range(params.depth - 1):
        if i > 0:
            z = (a.reshape(-1, h) @ params.shared[i - 1]).reshape(n, s, h)
        a = np.maximum(z, 0.0)
        mask = None
        if dropout > 0.0:
            mask = dropout_mask(a.shape, dropout, rng)
            a = a * mask
        pre.append(z)
        post.append(a)
        drop.append(mask)
    out = np.einsum("nsh,sh->ns", a, params.output[heads])
    return ForwardCache(heads, xt, pre, post, drop, out)


def forward(params: NetworkParams, xt: np.ndarray, heads=None) -> np.ndarray:
    """Network outputs, one column per selected sub-network (all by default)."""
    xt = _check_input(params, xt)
    heads = np.arange(params.n_vars) if heads is None else np.asarray(heads, dtype=np.int64)
    per_chunk = max(1, _CHUNK_ELEMS // max(1, xt.shape[0] * max(params.h, params.n_vars)))
    if len(heads) <= per_chunk:
        return forward_cached(params, xt, heads).out
    parts = [
        forward_cached(params, xt, heads[i : i + per_chunk]).out
        for i in range(0, len(heads), per_chunk)
    ]
    return np.concatenate(parts, axis=1)


def backprop(params: NetworkParams, cache: ForwardCache, grad_out: np.ndarray) -> NetworkParams:
    """Gradient of a scalar loss given its gradient w.r.t. ``cache.out``."""
    grads = params.zeros_like()
    heads = cache.heads
    n, s, h = cache.xt.shape[0], len(heads), params.h
    g = np.asarray(grad_out, dtype=np.float64)  # (N, S)
    if params.depth == 2:
        dz = np.broadcast_to(g[:, :, None], (n, s, h))
    else:
        grads.output[heads] = np.einsum("nsh,ns->sh", cache.post[-1], g)
        da = g[:, :, None] * params.output[heads][None, :, :]
        for i in range(len(cache.pre) - 1, -1, -1):
            if cache.drop[i] is not None:
                da = da * cache.drop[i]
            dz = da * (cache.pre[i] > 0.0)
            if i == 0:
                break
            w = params.shared[i - 1]
            flat = dz.reshape(-1, h)
            grads.shared[i - 1] = cache.post[i - 1].reshape(-1, h).T @ flat
            da = (flat @ w.T).reshape(n, s, h)
    g_in = cache.xt.T @ np.ascontiguousarray(dz).reshape(n, s * h)
    grads.input[heads] = g_in.reshape(params.n_vars, s, h).transpose(1, 0, 2) * params.mask[heads][:, :, None]
    return grads


class Adam:
    """Adam with bias correction; masks are re-applied after each step.

    Sub-networks whose input/output weights have never received a nonzero
    gradient carry zero moments, so their update is exactly zero and they
    are skipped.
    """

    def __init__(self, params: NetworkParams, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for _, a in params.blocks()]
        self.v = [np.zeros_like(a) for _, a in params.blocks()]
        self.active = np.zeros(params.n_vars, dtype=bool)

    def _update(self, p, g, m, v, bc1, bc2):
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def step(self, params: NetworkParams, grads: NetworkParams) -> None:
        touched = np.abs(grads.input).reshape(params.n_vars, -1).max(axis=1) > 0
        touched |= np.abs(grads.output).max(axis=1) > 0
        self.active |= touched
        idx = None if self.active.all() else np.flatnonzero(self.active)
        pairs = list(zip(params.blocks(), grads.blocks()))
        for name, g in grads.blocks():
            view = g if idx is None or name not in ("input", "output") else g[idx]
            if not np.all(np.isfinite(view)):
                raise NumericError(f"non-finite gradient in parameter block '{name}'")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, ((name, p), (_, g)) in enumerate(pairs):
            if name == "output" and params.depth == 2:
                continue
            if idx is not None and name in ("input", "output"):
                pi, mi, vi = p[idx], self.m[i][idx], self.v[i][idx]
                self._update(pi, g[idx], mi, vi, bc1, bc2)
                p[idx], self.m[i][idx], self.v[i][idx] = pi, mi, vi
            else:
                self._update(p, g, self.m[i], self.v[i], bc1, bc2)
        if idx is None:
            params.apply_mask()
        else:
            params.input[idx] *= params.mask[idx][:, :, None]


def adam_step(state: Adam, params: NetworkParams, grads: NetworkParams):
    state.step(params, grads)
    return state, params


def save_checkpoint(path, params: NetworkParams, seed: int | None = None, extra: dict | None = None) -> None:
    """Write ``params`` to a binary checkpoint.

    Layout: the 8-byte magic ``CASTLEv1``, a little-endian uint32 header
    length, a UTF-8 JSON header (version, d, depth, h, seed, extra), then
    every block as little-endian float64 in row-major order: mask ``(K, K)``,
    input ``(K, K, h)``, each shared ``(h, h)``, output ``(K, h)``.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "d": params.d,
        "depth": params.depth,
        "h": params.h,
        "seed": seed,
        "extra": extra or params.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in [params.mask, params.input, *params.shared, params.output]:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n])
    K, h, depth = header["d"] + 1, header["h"], header["depth"]
    pos = 12 + n

    def take(*shape):
        nonlocal pos
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        return arr.astype(np.float64)

    mask = take(K, K)
    w_in = take(K, K, h)
    shared = [take(h, h) for _ in range(depth - 2)]
    out = take(K, h)
    meta = dict(header.get("extra") or {})
    if header.get("seed") is not None:
        meta["seed"] = header["seed"]
    return NetworkParams(w_in, shared, out, mask, meta)
