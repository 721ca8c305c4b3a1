import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castle.analysis import (
    ROLES,
    BoundInputs,
    bound_constants,
    bound_formula,
    characterize_weights,
    evaluate_bound,
    extract_edges,
    hidden_output_l2,
    max_spectral_norm,
    model_inputs,
    node_roles,
    write_bound,
    write_edges,
    write_roles,
)
from castle.errors import DataError
from castle.harness.training import TrainConfig, train_dataset
from castle.objective import acyclicity_penalty, adjacency_summary
from castle.regularizers import RegularizerSpec
from castle.synth import Dag, SemSpec, add_noise_vars, gen_data, toy_dag
from castle.tensor import Rng

from conftest import dfs_acyclic, random_params


class TestEdges:
    def test_zero(self):
        assert extract_edges(np.zeros((3, 3)), 0.3) == []

    def test_example(self):
        assert extract_edges(np.array([[0, 0.5], [0.1, 0]]), 0.3) == [(0, 1, 0.5)]

    def test_threshold_zero_is_nonzero_pattern(self):
        m = adjacency_summary(random_params(4, 3, 3, 2))
        m[1, 3] = 0.0
        got = {(k, j) for k, j, _ in extract_edges(m, 0.0)}
        assert got == {(k, j) for k in range(5) for j in range(5) if m[k, j] != 0}

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            extract_edges(np.zeros((2, 2)), -1)

    def test_write(self, tmp_path):
        write_edges(tmp_path / "e.txt", [(0, 1, 0.5)], ["y", "x1"])
        assert (tmp_path / "e.txt").read_text() == "y -> x1  0.5\n"

    def test_acyclic_pattern(self):
        # every 0/1 pattern on 3 nodes: small penalty on the binary pattern means DFS-acyclic
        off = [(i, j) for i in range(3) for j in range(3) if i != j]
        for bits in itertools.product([0, 1], repeat=len(off)):
            m = np.zeros((3, 3))
            for (i, j), b in zip(off, bits):
                m[i, j] = b
            pattern = np.zeros((3, 3), dtype=bool)
            for k, j, _ in extract_edges(m, 0.0):
                pattern[k, j] = True
            if acyclicity_penalty(pattern.astype(float)) < 1e-8:
                assert dfs_acyclic(pattern)


class TestRoles:
    def test_partition(self):
        roles = node_roles(toy_dag(), 0)
        assert sum(r is not None for r in roles) == 9
        assert all(r in ROLES for r in roles if r is not None)

    def test_zero(self):
        w = characterize_weights(np.zeros((10, 10)), toy_dag())
        assert all(v == 0 for v in w.incoming.values())

    def test_hand_built(self):
        m = np.zeros((10, 10))
        m[[2, 3], 0] = 1.0  # parents
        m[4, 0] = 0.1  # spouse
        w = characterize_weights(m, toy_dag())
        assert w.parents == 1.0 and w.spouses == 0.1
        assert w.counts["parents"] == 2 and w.counts["siblings"] == 3

    def test_noise_flags(self):
        g = Dag(4, [(1, 0, 1.0)])
        m = np.zeros((4, 4))
        m[3, 0] = 0.2
        w = characterize_weights(m, g, 0, [False, False, False, True])
        assert w.noise == 0.2 and w.counts["noise"] == 1 and w.counts["other"] == 1

    def test_connected_noise(self):
        with pytest.raises(DataError):
            node_roles(Dag(3, [(1, 0, 1.0)]), 0, [False, True, False])

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            characterize_weights(np.zeros((3, 3)), toy_dag())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_brute_force(self, seed):
        g = toy_dag()
        m = Rng(seed).normal((10, 10))
        w = characterize_weights(m, g)
        pa, ch = set(g.parents(0)), set(g.children(0))
        for role in ("parents", "children", "spouses", "siblings"):
            members = []
            for k in range(1, 10):
                if k in pa:
                    r = "parents"
                elif k in ch:
                    r = "children"
                elif any(k in g.parents(c) for c in ch):
                    r = "spouses"
                elif any(k in g.children(p) for p in pa):
                    r = "siblings"
                else:
                    r = "other"
                if r == role:
                    members.append(k)
            total_in = 0.0
            total_out = 0.0
            for k in members:
                total_in += abs(m[k][0])
                total_out += abs(m[0][k])
            assert w.incoming[role] == pytest.approx(total_in / len(members), abs=1e-15)
            assert w.outgoing[role] == pytest.approx(total_out / len(members), abs=1e-15)

    def test_trained_checkpoint(self, tmp_path):
        ds = gen_data(toy_dag(), SemSpec(sigma=1.0), 200, Rng(1))
        res, _ = train_dataset(ds, RegularizerSpec("castle", 0.01), TrainConfig(epochs=5, patience=5))
        m = adjacency_summary(res.params)
        w = characterize_weights(m, toy_dag())
        assert w.parents == pytest.approx((m[2, 0] + m[3, 0]) / 2, abs=1e-15)
        write_roles(tmp_path / "r.csv", w)
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + len(ROLES)


class TestBound:
    def test_c2(self):
        assert bound_constants(3, 2, 1, 1.0, 1.0, 0.5, 1.0)[2] == 4.0

    def test_constants_oracle(self):
        zeta, c1, _ = bound_constants(3, 2, 1, 1.0, 1.0, 1.0, 1.0)
        z = 3 * math.e * math.sqrt(2 * math.log(4 * math.e))
        assert zeta == pytest.approx(z, rel=1e-15)
        assert c1 == pytest.approx((2 * z) ** 2, rel=1e-14)

    def test_large_n_limit(self):
        vals = [bound_formula(0.3, 0.1, 2.0, 1.5, n, 50.0, 4.0, 0.05) for n in (1e2, 1e4, 1e6)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] - (4 * 0.3 + 4.0) < 1e-3

    def test_directional_monotone(self):
        base = dict(l_n=0.3, r=0.1, v1=2.0, v2=1.5, n=100, c1=5.0, c2=4.0, delta=0.05)
        b0 = bound_formula(**base)
        for key in ("r", "v1", "v2"):
            assert bound_formula(**{**base, key: base[key] + 0.5}) > b0
        assert bound_formula(**{**base, "delta": 0.01}) > b0

    @pytest.mark.parametrize("kw", [{"delta": 0.0}, {"delta": 1.0}, {"gamma": 0.0}, {"s": -1.0},
                                    {"B": 0.0}, {"kappa": -1.0}])
    def test_invalid_inputs(self, kw):
        with pytest.raises(ValueError):
            BoundInputs(**kw)

    def test_evaluate(self, tmp_path):
        p = random_params(3, 3, 4, 1)
        xt = Rng(2).normal((50, 4))
        res = evaluate_bound(p, xt, BoundInputs(gamma=0.5))
        assert res.c2 == 4.0 and res.coefficient == 1.0
        assert res.kappa == max_spectral_norm(p)
        assert res.B == pytest.approx(max(np.linalg.norm(r) for r in xt))
        assert res.v2 == pytest.approx(math.sqrt(sum(np.sum(w**2) for w in p.shared) + np.sum(p.output**2)))
        expected = bound_formula(res.l_n, res.r, res.v1, res.v2, 50, res.c1, res.c2, 0.05)
        assert res.value == expected
        app = evaluate_bound(p, xt, BoundInputs(gamma=0.5), appendix=True)
        assert app.value - res.value == pytest.approx(
            (res.r + res.c1 * (res.v1 + res.v2) + math.log(8 / 0.05)) / 50)
        write_bound(tmp_path / "b.txt", res)
        assert f"value = {res.value!r}" in (tmp_path / "b.txt").read_text()

    def test_spectral_norm_measured(self):
        p = random_params(2, 3, 3, 4)
        norms = [np.linalg.svd(w, compute_uv=False)[0] for w in list(p.input) + list(p.shared)]
        norms += [np.linalg.norm(o) for o in p.output]
        assert max_spectral_norm(p) == pytest.approx(max(norms), rel=1e-9)

    def test_linear_v2(self):
        p = random_params(2, 2, 3, 4)
        assert hidden_output_l2(p) == 0.0

    def test_model_inputs(self):
        p = random_params(1, 3, 2, 0)
        x = np.array([[1.0, 2.0]])
        assert np.array_equal(model_inputs(p, x), x)
        p.meta.update(mean=[1.0, 1.0], std=[2.0, 0.5])
        assert np.array_equal(model_inputs(p, x), [[0.0, 2.0]])


def test_noise_columns_in_roles_from_dataset():
    ds = add_noise_vars(gen_data(toy_dag(), SemSpec(sigma=1.0), 20, Rng(0)), 2, Rng(1))
    g = Dag(12, toy_dag().edges)
    w = characterize_weights(np.ones((12, 12)) - np.eye(12), g, 0, ds.noise)
    assert w.counts["noise"] == 2 and w.noise == 1.0
