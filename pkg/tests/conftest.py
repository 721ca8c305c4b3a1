import pytest

from castle.network import NetworkShape, init_params
from castle.tensor import Rng


def random_params(d, depth, h, seed, scale=1.0):
    params = init_params(NetworkShape(d, depth, h), Rng(seed, 0))
    r = Rng(seed, 9)
    params.input += scale * r.normal(params.input.shape, 0.0, 0.3)
    params.shared = [w + scale * r.normal(w.shape, 0.0, 0.3) for w in params.shared]
    if depth > 2:
        params.output += scale * r.normal(params.output.shape, 0.0, 0.3)
    params.apply_mask()
    return params


@pytest.fixture
def rng():
    return Rng(1234, 0)


@pytest.fixture
def small_data():
    return Rng(77, 0).normal((20, 4))


def dfs_acyclic(adj) -> bool:
    """Independent cycle detector: three-colour depth-first search."""
    n = len(adj)
    colour = [0] * n

    def visit(u):
        colour[u] = 1
        for v in range(n):
            if adj[u][v]:
                if colour[v] == 1:
                    return False
                if colour[v] == 0 and not visit(v):
                    return False
        colour[u] = 2
        return True

    return all(colour[u] != 0 or visit(u) for u in range(n))

