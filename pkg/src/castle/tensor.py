"""Numeric substrate: matrix exponential, spectral norm and a portable RNG.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.

The random generator is SplitMix64 run in counter mode so that a block of
``n`` outputs can be produced in one vectorised call::

    GOLDEN = 0x9E3779B97F4A7C15
    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)

    key      = mix(seed ^ mix(stream + GOLDEN))         (all mod 2**64)
    output_i = mix(key + GOLDEN * (i + 1))              i = 0, 1, 2, ...

Uniform doubles are ``(output >> 11) * 2**-53`` in [0, 1).  Gaussians use
Box-Muller on consecutive uniform pairs ``(u1, u2)``:
``r = sqrt(-2 ln(1 - u1))`` and the pair ``(r cos 2πu2, r sin 2πu2)`` is
emitted in that order.  An odd request discards the final sine output, so
every Gaussian call consumes an even number of words.
"""

from __future__ import annotations

import math

import numpy as np

from castle.errors import DimensionError, NumericError

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG53 = 2.0**-53

TAYLOR_ORDER = 18


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(value: int) -> int:
    return int(_mix(np.array([value % 2**64], dtype=np.uint64))[0])


class Rng:
    """Deterministic 64-bit generator identified by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = (self.seed % 2**64) ^ _mix_int(self.stream + int(GOLDEN))
        self._key = np.uint64(_mix_int(key))
        self._counter = 0

    def spawn(self, stream: int) -> "Rng":
        """Independent generator for a sub-task, derived from this seed."""
        return Rng(_mix_int(self.seed ^ _mix_int(self.stream)), stream)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = self._key + GOLDEN * idx
        return _mix(z)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def gaussian(self, mu: float, sigma: float, n: int) -> np.ndarray:
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return mu + sigma * z[:n]

    def normal(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return self.gaussian(mu, sigma, int(np.prod(shape))).reshape(shape)

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` draws from {0, ..., high-1}."""
        if high < 1:
            raise ValueError("high must be >= 1")
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        return self.permutation(n)[:k]

    def gamma(self, shape: float, n: int) -> np.ndarray:
        # Marsaglia-Tsang; shape < 1 boosted via U**(1/shape).
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        boost = shape < 1.0
        a = shape + 1.0 if boost else shape
        d = a - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        out = np.empty(0)
        while out.size < n:
            m = max(16, 2 * (n - out.size))
            x = self.gaussian(0.0, 1.0, m)
            u = self.uniform(m)
            v = (1.0 + c * x) ** 3
            ok = v > 0
            with np.errstate(invalid="ignore", divide="ignore"):
                ok &= np.log(u) < 0.5 * x * x + d - d * v + d * np.log(np.where(ok, v, 1.0))
            out = np.concatenate([out, d * v[ok]])
        out = out[:n]
        if boost:
            out = out * self.uniform(n) ** (1.0 / shape)
        return out

    def beta(self, a: float, b: float, n: int) -> np.ndarray:
        if a == 1.0 and b == 1.0:
            return self.uniform(n)
        x = self.gamma(a, n)
        y = self.gamma(b, n)
        return x / (x + y)


def rng_gaussian(rng: Rng, mu: float, sigma: float, n: int) -> np.ndarray:
    return rng.gaussian(mu, sigma, n)


def mat_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor core.

    The argument is scaled by ``2**-s`` so that its 1-norm is at most one,
    the series is summed up to order ``TAYLOR_ORDER`` (stopping early once a
    term no longer changes the sum), and the result is squared ``s`` times.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"mat_exp needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("mat_exp input has non-finite entries")
    n = a.shape[0]
    norm = np.abs(a).sum(axis=0).max() if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm)))) if norm > 1.0 else 0
    b = a / 2.0**s
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, TAYLOR_ORDER + 1):
        term = term @ b / k
        result = result + term
        tnorm = np.abs(term).sum(axis=0).max()
        if tnorm <= 1e-18 * np.abs(result).sum(axis=0).max():
            break
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            result = result @ result
    if not np.all(np.isfinite(result)):
        raise NumericError(f"mat_exp overflow (1-norm of input {norm:.3g})")
    return result


def spectral_norm(a: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``a.T @ a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise DimensionError("spectral_norm of an empty matrix")
    if a.ndim == 1:
        a = a[:, None]
    v = 1.0 + Rng(0x5EED).uniform(a.shape[1])
    v /= np.linalg.norm(v)
    prev = -1.0
    for it in range(1, max_iter + 1):
        w = a.T @ (a @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam - prev) <= tol * abs(lam):
            return math.sqrt(max(lam, 0.0))
        prev = lam
    raise NumericError(f"spectral_norm did not converge after {max_iter} iterations")
