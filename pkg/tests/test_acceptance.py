"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one ``CRITERION <id>: PASS|FAIL`` line with the measured
numbers, then asserts.  The experiment-backed criteria are marked ``slow``;
deselect them with ``-m "not slow"``.  Scopes that had to be reduced to fit a
single CPU core are listed in the constants below.
"""

from __future__ import annotations

import itertools
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from castle.analysis import characterize_weights
from castle.harness.data import standardize
from castle.harness.experiment import ExperimentConfig, run_experiment
from castle.harness.metrics import average_rank, mse
from castle.harness.training import TrainConfig, predict, train_model
from castle.objective import acyclicity_penalty, adjacency_summary
from castle.regularizers import RegularizerSpec
from castle.synth import SemSpec, add_noise_vars, column_dag, gen_dag, gen_data
from castle.tensor import Rng

from conftest import dfs_acyclic
from test_objective import fd_check, random_configuration

slow = pytest.mark.slow

# Criterion 1 and 2: the ten-node toy graph, sigma = 1, 1000 test rows.
TOY_SIZES = (500, 1000, 5000)
LINEAR_LARGE_N = 50_000
LINEAR_LARGE_FOLDS = 1  # one CV iteration at n = 50000

# Criterion 3 and 6: random DAGs with |G| = 50 and 50|G| rows, one CV iteration per DAG.
RANK_DAGS = 10
RANK_NODES = 50
RANK_NOISE = 100
RANK_WIDTH = 16  # d + 1 = 51 units makes one CASTLE cell take 2.5-7 min
RANK_BATCH = 128

# Criterion 7: seeded toy runs.
ABLATION_SEEDS = 10
ABLATION_N = 1000

# Criterion 8: 400 columns from a 50-node DAG padded with noise.
SCALE_FEATURES = 400
SCALE_NODES = 50
SCALE_N = 1000
SCALE_BATCH = 128
SCALE_WIDTH = 32  # d + 1 = 401 units would need ~0.5 GB per input tensor
SCALE_COUNTS = (8, 16, 32, 64, 128)
SCALE_EPOCHS = 60
SCALE_TIMING_EPOCHS = 3


def report(capsys, cid, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {cid}: {'PASS' if ok else 'FAIL'} | {detail}")


def toy_config(n, link, **kw):
    base = dict(data="toy", n=n, test_n=1000, sigma=1.0, link=link, folds=10,
                regularizers=("baseline", "castle"), seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


@lru_cache(maxsize=None)
def toy_nonlinear(n):
    return run_experiment(toy_config(n, "sigmoid")).table


@slow
def test_criterion_1a_nonlinear_toy_level(capsys):
    m500 = toy_nonlinear(500).mean_score("castle")
    m5000 = toy_nonlinear(5000).mean_score("castle")
    ok500 = abs(m500 - 0.77) <= 0.10
    ok5000 = abs(m5000 - 0.68) <= 0.06
    report(capsys, "1a", ok500 and ok5000,
           f"CASTLE test MSE n=500: {m500:.4f} (target 0.77±0.10), n=5000: {m5000:.4f} (target 0.68±0.06)")
    assert ok500 and ok5000


@slow
def test_criterion_1b_castle_not_worse_than_baseline(capsys):
    parts, ok = [], True
    for n in TOY_SIZES:
        t = toy_nonlinear(n)
        c, b = t.mean_score("castle"), t.mean_score("baseline")
        ok &= c <= b
        parts.append(f"n={n}: castle {c:.4f} vs baseline {b:.4f}")
    report(capsys, "1b", ok, "; ".join(parts))
    assert ok


@slow
def test_criterion_2_linear_toy(capsys):
    base = dict(regularizers=("castle",), metric_scale="original")
    m5000 = run_experiment(toy_config(5000, "identity", **base)).table.mean_score("castle")
    big = toy_config(LINEAR_LARGE_N, "identity", max_folds=LINEAR_LARGE_FOLDS, **base)
    m50000 = run_experiment(big).table.mean_score("castle")
    ok_a = abs(m5000 - 1.009) <= 0.05
    ok_b = abs(m50000 - 1.0) <= 0.03
    report(capsys, 2, ok_a and ok_b,
           f"CASTLE test MSE n=5000: {m5000:.4f} (target 1.009±0.05); "
           f"n=50000: {m50000:.4f} (target within 0.03 of 1.0)")
    assert ok_a and ok_b


def rank_config(noise_vars, **kw):
    base = dict(data="random", nodes=RANK_NODES, n=50 * RANK_NODES, test_n=1000, n_dags=RANK_DAGS,
                noise_vars=noise_vars, folds=10, max_folds=1, width=RANK_WIDTH,
                batch_size=RANK_BATCH, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


@lru_cache(maxsize=None)
def rank_run(noise_vars):
    return run_experiment(rank_config(noise_vars), keep_params=True)


@slow
def test_criterion_3_rank_robustness(capsys):
    clean = {s.regularizer: s.mean for s in average_rank(rank_run(0).table)}
    noisy = {s.regularizer: s.mean for s in average_rank(rank_run(RANK_NOISE).table)}
    others = [v for g, v in clean.items() if g != "castle"]
    best = clean["castle"] < min(others)
    drift = noisy["castle"] - clean["castle"]
    sae_worse = noisy["sae"] > clean["sae"]
    ok = best and drift < 0.5 and sae_worse
    order = ", ".join(f"{g} {v:.2f}" for g, v in sorted(clean.items(), key=lambda kv: kv[1]))
    report(capsys, 3, ok,
           f"clean ranks: {order}; castle {clean['castle']:.2f} -> {noisy['castle']:.2f} "
           f"(+{RANK_NOISE} noise, change {drift:+.2f}); sae {clean['sae']:.2f} -> {noisy['sae']:.2f}")
    assert ok


def test_criterion_4_gradient_check(capsys):
    worst = max(fd_check(*random_configuration(i)) for i in range(50))
    ok = worst < 1e-4
    report(capsys, 4, ok, f"worst relative error over 50 configurations: {worst:.2e} (< 1e-4)")
    assert ok


def test_criterion_5_acyclicity_oracle(capsys):
    pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
    agree = 0
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        m = np.zeros((4, 4))
        for (i, j), b in zip(pairs, bits):
            m[i, j] = b
        agree += (acyclicity_penalty(m) <= 1e-9) == dfs_acyclic(m.tolist())
    ok = agree == 4096
    report(capsys, 5, ok, f"{agree}/4096 digraphs agree with the DFS detector")
    assert ok


def role_means(result):
    """Per-DAG role weights of the selected CASTLE model, averaged over DAGs with that role."""
    per_role = {}
    for prep in result.datasets:
        cell = result.cells[(prep.name, 0, "castle")]
        msum = adjacency_summary(cell.extra["params"])
        truth = column_dag(prep.truth, prep.pool)
        w = characterize_weights(msum, truth, 0, prep.pool.noise)
        for role, count in w.counts.items():
            if count:
                per_role.setdefault(role, []).append(w.incoming[role])
    return {role: float(np.mean(v)) for role, v in per_role.items()}


@lru_cache(maxsize=None)
def orphan_run():
    cfg = rank_config(RANK_NOISE, target_mode="orphan", regularizers=("castle",))
    return run_experiment(cfg, keep_params=True)


@slow
def test_criterion_6_weight_characterization(capsys):
    par = role_means(rank_run(RANK_NOISE))
    orph = role_means(orphan_run())
    ok_par = par["parents"] > par.get("spouses", 0.0) and par["parents"] > par.get("siblings", 0.0)
    ok_orph = orph["children"] > orph.get("spouses", 0.0)
    ok_noise = par["noise"] < 0.1 * par["parents"] and orph["noise"] < 0.1 * orph["children"]
    ok = ok_par and ok_orph and ok_noise
    fmt = lambda d: ", ".join(f"{k} {v:.4f}" for k, v in sorted(d.items()))
    report(capsys, 6, ok, f"with parents: {fmt(par)}; parentless: {fmt(orph)}")
    assert ok


ABLATIONS = {
    "no L_N": dict(use_recon=False),
    "no R": dict(use_acyclic=False),
    "no V": dict(use_l1=False),
}


@slow
def test_criterion_7_ablation(capsys):
    wins = {k: 0 for k in ABLATIONS}
    for seed in range(ABLATION_SEEDS):
        cfg = toy_config(ABLATION_N, "sigmoid", regularizers=("castle",), max_folds=1, seed=seed)
        full = run_experiment(cfg).table.mean_score("castle")
        for name, toggles in ABLATIONS.items():
            abl = run_experiment(replace(cfg, **toggles)).table.mean_score("castle")
            wins[name] += full <= abl
    ok = all(v >= 7 for v in wins.values())
    report(capsys, 7, ok, "full objective wins: " + ", ".join(
        f"vs {k} {v}/{ABLATION_SEEDS}" for k, v in wins.items()) + " (need >= 7 each)")
    assert ok


@lru_cache(maxsize=None)
def scale_data():
    rng = Rng(11, 0)
    dag = gen_dag(SCALE_NODES, 3, rng, "parents")
    ds = gen_data(dag, SemSpec(), SCALE_N + 1000, rng)
    ds = add_noise_vars(ds, SCALE_FEATURES - (SCALE_NODES - 1), rng)
    assert ds.d == SCALE_FEATURES
    pool, test = ds.xt[:SCALE_N], ds.xt[SCALE_N:]
    _, tr, va, te = standardize(pool[: SCALE_N * 4 // 5], pool[SCALE_N * 4 // 5 :], test)
    return tr, va, te


def scale_fit(subsample, epochs, patience):
    tr, va, te = scale_data()
    cfg = TrainConfig(epochs=epochs, patience=patience, subsample=subsample, width=SCALE_WIDTH,
                      batch_size=SCALE_BATCH, seed=3)
    res = train_model(tr, va, RegularizerSpec("castle", 0.01), cfg)
    return res, mse(predict(res.params, te), te[:, 0])


@slow
def test_criterion_8_subsampling(capsys):
    times = []
    for c in SCALE_COUNTS:
        res, _ = scale_fit(c, SCALE_TIMING_EPOCHS, SCALE_TIMING_EPOCHS)
        times.append(float(np.median(res.epoch_seconds)))
    slope = float(np.polyfit(np.log(SCALE_COUNTS), np.log(times), 1)[0])
    _, sub_mse = scale_fit(32, SCALE_EPOCHS, 30)
    _, full_mse = scale_fit(None, SCALE_EPOCHS, 30)
    rel = abs(sub_mse - full_mse) / full_mse
    ok = slope <= 1.0 and rel < 0.10
    tl = ", ".join(f"{c}: {t:.3f}s" for c, t in zip(SCALE_COUNTS, times))
    report(capsys, 8, ok, f"epoch time by sub-sample count {tl} (log-log slope {slope:.2f} <= 1); "
           f"test MSE sub-sampled {sub_mse:.4f} vs full {full_mse:.4f} (rel. diff {rel:.3f} < 0.10)")
    assert ok
