"""Random DAGs and the additive-noise structural equation sampler."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from castle.harness.data import Dataset
from castle.tensor import Rng


@dataclass
class Dag:
    n_nodes: int
    edges: list[tuple[int, int, float]] = field(default_factory=list)
    target: int = 0
    labels: list[str] | None = None

    def __post_init__(self):
        seen = set()
        for u, v, _ in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge {u}->{v} outside {self.n_nodes} nodes")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge {u}->{v}")
            seen.add((u, v))
        if self.topological_order() is None:
            raise ValueError("edge list contains a directed cycle")

    def parents(self, v: int) -> list[int]:
        return sorted(u for u, c, _ in self.edges if c == v)

    def children(self, u: int) -> list[int]:
        return sorted(c for p, c, _ in self.edges if p == u)

    def weight(self, u: int, v: int) -> float:
        for a, b, w in self.edges:
            if a == u and b == v:
                return w
        raise KeyError((u, v))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for u, v, w in self.edges:
            a[u, v] = w
        return a

    def topological_order(self) -> list[int] | None:
        """Kahn's algorithm; ``None`` if a cycle exists."""
        indeg = [0] * self.n_nodes
        out = [[] for _ in range(self.n_nodes)]
        for u, v, _ in self.edges:
            indeg[v] += 1
            out[u].append(v)
        queue = deque(i for i in range(self.n_nodes) if indeg[i] == 0)
        order = []
        while queue:
            u = queue.popleft()
            order.append(u)
            for v in out[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
        return order if len(order) == self.n_nodes else None

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels else f"n{i}"


@dataclass
class SemSpec:
    mu: float = 0.0
    sigma: float | None = None
    w: float = 1.0
    link: str = "sigmoid"

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.link not in ("identity", "sigmoid"):
            raise ValueError(f"unknown link {self.link!r}")


def gen_dag(num_nodes: int, branching_factor: int, rng: Rng, target_mode: str = "parents") -> Dag:
    """Random DAG with out-degree capped at ``branching_factor``.

    Nodes get a random enumeration; all forward edges (earlier -> later in
    that enumeration) are shuffled and added greedily while the source still
    has spare out-degree, which keeps the graph acyclic by construction.
    ``target_mode`` picks the target among nodes with parents ("parents"),
    without parents ("orphan") or among all nodes ("any").
    """
    if num_nodes < 1:
        raise ValueError("need at least one node")
    if branching_factor < 0:
        raise ValueError("branching factor must be non-negative")
    rank = rng.permutation(num_nodes)
    pos = np.empty(num_nodes, dtype=np.int64)
    pos[rank] = np.arange(num_nodes)
    cand = [(u, v) for u in range(num_nodes) for v in range(num_nodes) if pos[u] < pos[v]]
    edges = []
    outdeg = np.zeros(num_nodes, dtype=np.int64)
    for i in rng.permutation(len(cand)):
        u, v = cand[i]
        if outdeg[u] < branching_factor:
            edges.append((u, v, 1.0))
            outdeg[u] += 1
    edges.sort()
    dag = Dag(num_nodes, edges)
    dag.target = choose_target(dag, rng, target_mode)
    return dag


def choose_target(dag: Dag, rng: Rng, mode: str = "parents") -> int:
    has_par = np.zeros(dag.n_nodes, dtype=bool)
    for _, v, _ in dag.edges:
        has_par[v] = True
    if mode == "parents":
        pool = np.flatnonzero(has_par)
    elif mode == "orphan":
        pool = np.flatnonzero(~has_par)
    elif mode == "any":
        pool = np.arange(dag.n_nodes)
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    if pool.size == 0:
        pool = np.arange(dag.n_nodes)
    return int(pool[rng.integers(pool.size, 1)[0]])


def random_dag(num_nodes: int, rng: Rng, target_mode: str = "parents",
               max_branching: int | None = None) -> Dag:
    """DAG whose branching factor is itself drawn from 1..max_branching."""
    cap = num_nodes if max_branching is None else max_branching
    bf = int(rng.integers(cap, 1)[0]) + 1
    return gen_dag(num_nodes, bf, rng, target_mode)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def column_order(dag: Dag) -> list[int]:
    """Target first, remaining nodes in index order."""
    return [dag.target] + [i for i in range(dag.n_nodes) if i != dag.target]


def gen_data(dag: Dag, spec: SemSpec, n: int, rng: Rng) -> Dataset:
    """Sample ``n`` rows: each node = sum_par w * link(par) + N(mu, sigma^2).

    Noise is drawn node by node in index order (``n`` values each) and the
    parent contributions are then accumulated in topological order.  With
    ``spec.sigma`` unset, one sigma ~ U[0.3, 1] is drawn for the whole DAG.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sigma = spec.sigma if spec.sigma is not None else float(rng.uniform(1, 0.3, 1.0)[0])
    link = _sigmoid if spec.link == "sigmoid" else (lambda x: x)
    vals = np.empty((dag.n_nodes, n))
    for node in range(dag.n_nodes):
        vals[node] = rng.gaussian(spec.mu, sigma, n)
    order = dag.topological_order()
    for node in order:
        for par in dag.parents(node):
            vals[node] += dag.weight(par, node) * spec.w * link(vals[par])
    cols = column_order(dag)
    names = ["y"] + [f"x{i}" for i in range(1, len(cols))]
    return Dataset(
        vals[cols].T.copy(),
        names,
        "regression",
        provenance=f"synth(nodes={dag.n_nodes}, link={spec.link}, sigma={sigma:.6g})",
        nodes=list(cols),
    )


def add_noise_vars(dataset: Dataset, v: int, rng: Rng) -> Dataset:
    """Append ``v`` independent N(0, 1) columns flagged as noise."""
    if v < 0:
        raise ValueError("v must be non-negative")
    if v == 0:
        return dataset
    extra = rng.gaussian(0.0, 1.0, dataset.n * v).reshape(v, dataset.n).T
    k = int(dataset.noise.sum())
    names = dataset.names + [f"noise{k + i + 1}" for i in range(v)]
    nodes = (dataset.nodes or [None] * len(dataset.names)) + [None] * v
    return Dataset(
        np.hstack([dataset.xt, extra]),
        names,
        dataset.task,
        np.concatenate([dataset.noise, np.ones(v, dtype=bool)]),
        dataset.provenance,
        nodes,
    )


TOY_LABELS = ["Y", "X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "X9"]


def toy_dag() -> Dag:
    """The ten-node example graph: Y with parents X2, X3.

    Edges: X1->X2, X2->Y, X3->Y, X2->X5, X3->X6, X3->X7, Y->X8, X4->X8;
    X9 is disconnected.  Node i is labelled ``TOY_LABELS[i]`` and node 0 is
    the target, so dataset column j corresponds to node j.
    """
    e = [(1, 2), (2, 0), (3, 0), (2, 5), (3, 6), (3, 7), (0, 8), (4, 8)]
    return Dag(10, sorted((u, v, 1.0) for u, v in e), target=0, labels=list(TOY_LABELS))


def column_dag(dag: Dag, dataset: Dataset) -> Dag:
    """The generating DAG re-indexed by dataset column (noise columns edgeless)."""
    col_of = {node: j for j, node in enumerate(dataset.nodes or []) if node is not None}
    edges = sorted((col_of[u], col_of[v], w) for u, v, w in dag.edges)
    return Dag(len(dataset.names), edges, target=col_of[dag.target], labels=list(dataset.names))


def export_edges(dag: Dag, dataset: Dataset, path) -> None:
    """Write ``u -> v weight`` lines using the dataset's column names."""
    col_of = {node: j for j, node in enumerate(dataset.nodes or []) if node is not None}
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, w in dag.edges:
            fh.write(f"{dataset.names[col_of[u]]} -> {dataset.names[col_of[v]]} {w!r}\n")


def read_edges(path, names: list[str]) -> Dag:
    """Rebuild a ground-truth DAG over dataset columns from an edge file."""
    index = {name: j for j, name in enumerate(names)}
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            lhs, rhs = line.split("->")
            parts = rhs.split()
            w = float(parts[1]) if len(parts) > 1 else 1.0
            edges.append((index[lhs.strip()], index[parts[0]], w))
    return Dag(len(names), sorted(edges), target=0, labels=list(names))
