"""Reading a trained model: edge lists, role-based weights and the generalization bound."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from castle.errors import DataError
from castle.network import NetworkParams, forward
from castle.objective import acyclicity_penalty, adjacency_summary, input_l1, reconstruction_loss
from castle.synth import Dag
from castle.tensor import spectral_norm

DEFAULT_THRESHOLD = 0.3
ROLES = ("parents", "children", "spouses", "siblings", "other", "noise")


def extract_edges(msum, threshold: float = DEFAULT_THRESHOLD) -> list[tuple[int, int, float]]:
    """Edges ``k -> j`` for every ``M[k, j] > threshold``, row-major order."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    msum = np.asarray(msum, dtype=np.float64)
    ks, js = np.nonzero(msum > threshold)
    return [(int(k), int(j), float(msum[k, j])) for k, j in zip(ks, js)]


def write_edges(path, edges, names=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, j, w in edges:
            a = names[k] if names else str(k)
            b = names[j] if names else str(j)
            fh.write(f"{a} -> {b}  {w!r}\n")


def node_roles(truth: Dag, target: int, noise=None) -> list[str | None]:
    """Role of every node relative to ``target``; ``None`` for the target.

    Precedence when a node qualifies twice: parent, child, spouse, sibling.
    Flagged noise columns are "noise"; anything else left over is "other".
    """
    n = truth.n_nodes
    if not 0 <= target < n:
        raise DataError(f"target {target} outside {n} nodes")
    noise = np.zeros(n, dtype=bool) if noise is None else np.asarray(noise, dtype=bool)
    if noise.shape[0] != n:
        raise DataError(f"truth covers {n} columns but {noise.shape[0]} noise flags were given")
    parents = set(truth.parents(target))
    children = set(truth.children(target))
    spouses = {p for c in children for p in truth.parents(c)} - {target}
    siblings = {c for p in parents for c in truth.children(p)} - {target}
    roles = []
    for k in range(n):
        if k == target:
            roles.append(None)
        elif noise[k]:
            if k in parents | children | spouses | siblings:
                raise DataError(f"column {k} is flagged as noise but is connected to the target")
            roles.append("noise")
        elif k in parents:
            roles.append("parents")
        elif k in children:
            roles.append("children")
        elif k in spouses:
            roles.append("spouses")
        elif k in siblings:
            roles.append("siblings")
        else:
            roles.append("other")
    return roles


@dataclass
class RoleWeights:
    """Mean |M| per role; ``incoming`` reads M[k, target], ``outgoing`` M[target, k]."""

    incoming: dict[str, float]
    outgoing: dict[str, float]
    counts: dict[str, int]

    @property
    def parents(self) -> float:
        return self.incoming["parents"]

    @property
    def children(self) -> float:
        return self.incoming["children"]

    @property
    def spouses(self) -> float:
        return self.incoming["spouses"]

    @property
    def siblings(self) -> float:
        return self.incoming["siblings"]

    @property
    def noise(self) -> float:
        return self.incoming["noise"]


def characterize_weights(msum, truth: Dag, target: int = 0, noise=None) -> RoleWeights:
    msum = np.abs(np.asarray(msum, dtype=np.float64))
    if msum.shape != (truth.n_nodes, truth.n_nodes):
        raise DataError(f"adjacency {msum.shape} does not match a truth over {truth.n_nodes} columns")
    roles = node_roles(truth, target, noise)
    incoming, outgoing, counts = {}, {}, {}
    for role in ROLES:
        ks = [k for k, r in enumerate(roles) if r == role]
        counts[role] = len(ks)
        incoming[role] = float(msum[ks, target].mean()) if ks else 0.0
        outgoing[role] = float(msum[target, ks].mean()) if ks else 0.0
    return RoleWeights(incoming, outgoing, counts)


def write_roles(path, weights: RoleWeights) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "count", "mean_in", "mean_out"])
        for role in ROLES:
            w.writerow([role, weights.counts[role], repr(weights.incoming[role]),
                        repr(weights.outgoing[role])])


@dataclass
class BoundInputs:
    s: float = 1.0
    gamma: float = 1.0
    delta: float = 0.05
    B: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.gamma <= 0 or self.s <= 0:
            raise ValueError("gamma and s must be positive")
        for name in ("B", "kappa"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BoundResult:
    value: float
    n: int
    l_n: float
    r: float
    v1: float
    v2: float
    zeta: float
    c1: float
    c2: float
    kappa: float
    B: float
    depth: int
    h: int
    d: int
    coefficient: float
    log_term: float


def bound_constants(depth: int, h: int, d: int, B: float, kappa: float, gamma: float, s: float):
    """(zeta, C1, C2) of the bound."""
    zeta = depth * B * math.e * math.sqrt(2.0 * math.log(2.0 * math.e * h))
    c1 = (zeta * (d + 1) * kappa ** (depth - 1) / gamma) ** 2
    c2 = s * s + 6.0 * gamma
    return zeta, c1, c2


def bound_formula(l_n, r, v1, v2, n, c1, c2, delta, coefficient=1.0) -> float:
    return 4.0 * l_n + coefficient / n * (r + c1 * (v1 + v2) + math.log(8.0 / delta)) + c2


def max_spectral_norm(params: NetworkParams) -> float:
    norms = [spectral_norm(w) for w in params.input]
    norms += [spectral_norm(w) for w in params.shared]
    if params.depth > 2:
        norms += [float(np.linalg.norm(o)) for o in params.output]
    return max(norms)


def hidden_output_l2(params: NetworkParams) -> float:
    """l2 norm of all shared-hidden and output weights taken as one vector."""
    sq = sum(float(np.sum(w * w)) for w in params.shared)
    if params.depth > 2:
        sq += float(np.sum(params.output**2))
    return math.sqrt(sq)


def evaluate_bound(params: NetworkParams, xt, inputs: BoundInputs, appendix: bool = False) -> BoundResult:
    """Bound on the expected reconstruction loss, with its term breakdown.

    ``appendix=True`` doubles the coefficient of the 1/N bracket.  kappa and
    B are measured from the model and data unless given in ``inputs``.
    """
    xt = np.asarray(xt, dtype=np.float64)
    n = xt.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    l_n = reconstruction_loss(forward(params, xt), xt)
    r = acyclicity_penalty(adjacency_summary(params))
    v1 = input_l1(params)
    v2 = hidden_output_l2(params)
    kappa = inputs.kappa if inputs.kappa is not None else max_spectral_norm(params)
    B = inputs.B if inputs.B is not None else float(np.max(np.linalg.norm(xt, axis=1)))
    zeta, c1, c2 = bound_constants(params.depth, params.h, params.d, B, kappa, inputs.gamma, inputs.s)
    coef = 2.0 if appendix else 1.0
    value = bound_formula(l_n, r, v1, v2, n, c1, c2, inputs.delta, coef)
    return BoundResult(value, n, l_n, r, v1, v2, zeta, c1, c2, kappa, B, params.depth,
                       params.h, params.d, coef, math.log(8.0 / inputs.delta))


def write_bound(path, result: BoundResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in asdict(result).items():
            fh.write(f"{key} = {val!r}\n")


def model_inputs(params: NetworkParams, xt) -> np.ndarray:
    """Apply the standardization stored with a checkpoint, if any."""
    xt = np.asarray(xt, dtype=np.float64)
    mean, std = params.meta.get("mean"), params.meta.get("std")
    if mean is None or std is None:
        return xt
    return (xt - np.asarray(mean)) / np.asarray(std)
