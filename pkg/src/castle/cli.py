"""Command-line front end.

Every subcommand is a thin wrapper over a library call; ``--seed`` fixes all
randomness.  Flags override keys read from ``--config``.  The output
directory defaults to ``$CASTLE_OUTPUT_DIR`` and then to the current
directory.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from castle import SPEC_VERSION, __version__
from castle.analysis import (
    DEFAULT_THRESHOLD,
    BoundInputs,
    characterize_weights,
    evaluate_bound,
    extract_edges,
    model_inputs,
    write_bound,
    write_edges,
    write_roles,
)
from castle.errors import CastleError
from castle.harness.data import load_csv, save_csv
from castle.harness.experiment import (
    ExperimentConfig,
    load_config,
    parse_config,
    run_experiment,
    run_sweep,
)
from castle.harness.metrics import average_rank
from castle.harness.training import TrainConfig, train_dataset
from castle.network import load_checkpoint, save_checkpoint
from castle.objective import adjacency_summary
from castle.regularizers import KINDS, RegularizerSpec
from castle.synth import SemSpec, add_noise_vars, export_edges, gen_dag, gen_data, random_dag, read_edges, toy_dag
from castle.tensor import Rng

OUTPUT_ENV = "CASTLE_OUTPUT_DIR"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    rng = Rng(args.seed, 0)
    if args.toy:
        dag = toy_dag()
    elif args.branching > 0:
        dag = gen_dag(args.nodes, args.branching, rng, args.target_mode)
    else:
        dag = random_dag(args.nodes, rng, args.target_mode)
    sem = SemSpec(sigma=args.sigma, link=args.link)
    ds = add_noise_vars(gen_data(dag, sem, args.n, rng), args.noise_vars, rng)
    out = _out_dir(args)
    save_csv(ds, out / f"{args.name}.csv")
    export_edges(dag, ds, out / f"{args.name}_edges.txt")
    print(f"wrote {out / (args.name + '.csv')} ({ds.n} rows, {ds.d} features)")
    return 0


def _train_config(args) -> TrainConfig:
    patience = min(args.patience, args.epochs)
    return TrainConfig(lam=args.lam, lr=args.lr, epochs=args.epochs, patience=patience,
                       batch_size=args.batch_size, task=args.task, depth=args.depth,
                       width=args.width, seed=args.seed)


def cmd_train(args) -> int:
    ds = load_csv(args.data, args.target, args.task)
    strength = args.strength
    if strength is None:
        strength = args.beta if args.reg == "castle" else 0.0
    reg = RegularizerSpec(args.reg, strength)
    res, _ = train_dataset(ds, reg, _train_config(args), args.val_fraction)
    out = _out_dir(args)
    save_checkpoint(out / "model.ckpt", res.params, seed=args.seed)
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in res.history:
            w.writerow([epoch, repr(float(tr)), repr(float(va))])
    print(f"best epoch {res.best_epoch}, validation loss {res.val_loss:.6g}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    overrides = {k: v for k, v in {
        "seed": args.seed, "jobs": args.jobs, "data": args.data, "folds": args.folds,
        "max_folds": args.max_folds, "epochs": args.epochs,
    }.items() if v is not None}
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def cmd_benchmark(args) -> int:
    cfg = _experiment_config(args)
    out = _out_dir(args)
    res = run_experiment(cfg, out)
    for s in average_rank(res.table):
        print(f"{s.regularizer:12s} rank {s.mean:.3f} +- {s.std:.3f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    values = [float(v) for v in args.values.split(",")]
    res = run_sweep(cfg, args.param, values, _out_dir(args))
    for v, (_, ranks) in res.items():
        castle = [s for s in ranks if s.regularizer == "castle"]
        if castle:
            print(f"{args.param}={v!r}: castle rank {castle[0].mean:.3f}")
    return 0


def cmd_analyze(args) -> int:
    params = load_checkpoint(args.checkpoint)
    msum = adjacency_summary(params)
    names = params.meta.get("names")
    out = _out_dir(args)
    write_edges(out / "edges.txt", extract_edges(msum, args.threshold), names)
    if args.truth:
        if not names:
            raise CastleError("checkpoint has no column names; cannot match the truth file")
        truth = read_edges(args.truth, names)
        noise = [n.lower().startswith("noise") for n in names]
        write_roles(out / "roles.csv", characterize_weights(msum, truth, 0, noise))
    print(f"wrote {out / 'edges.txt'}")
    return 0


def cmd_bound(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data, args.target, params.meta.get("task", "regression"))
    inputs = BoundInputs(s=args.s, gamma=args.gamma, delta=args.delta, B=args.B, kappa=args.kappa)
    res = evaluate_bound(params, model_inputs(params, ds.xt), inputs, appendix=args.appendix)
    out = _out_dir(args)
    write_bound(out / "bound.txt", res)
    print(f"bound = {res.value!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="castle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"castle {__version__} (spec {SPEC_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")

    s = sub.add_parser("synth", help="sample a synthetic dataset and its true edges")
    common(s)
    s.add_argument("--nodes", type=int, default=10)
    s.add_argument("--branching", type=int, default=0, help="0 draws it at random")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--link", choices=("sigmoid", "identity"), default="sigmoid")
    s.add_argument("--sigma", type=float, default=None, help="noise std (default U[0.3, 1])")
    s.add_argument("--noise-vars", type=int, default=0)
    s.add_argument("--target-mode", choices=("parents", "orphan", "any"), default="parents")
    s.add_argument("--toy", action="store_true", help="use the ten-node example graph")
    s.add_argument("--name", default="data")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--target", default=None)
    t.add_argument("--task", choices=("regression", "classification"), default="regression")
    t.add_argument("--reg", choices=KINDS, default="castle")
    t.add_argument("--strength", type=float, default=None)
    t.add_argument("--lam", type=float, default=1.0)
    t.add_argument("--beta", type=float, default=0.01)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--patience", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--depth", type=int, default=3)
    t.add_argument("--width", type=int, default=None)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("benchmark", cmd_benchmark, "run the regularizer grid"),
                               ("sweep", cmd_sweep, "rank tables over lam or beta values")):
        b = sub.add_parser(name, help=helptext)
        b.add_argument("--seed", type=int, default=None)
        b.add_argument("--out")
        b.add_argument("--config")
        b.add_argument("--jobs", type=int, default=None)
        b.add_argument("--data", default=None)
        b.add_argument("--folds", type=int, default=None)
        b.add_argument("--max-folds", type=int, default=None)
        b.add_argument("--epochs", type=int, default=None)
        if name == "sweep":
            b.add_argument("--param", choices=("lam", "beta"), default="lam")
            b.add_argument("--values", default="0.01,0.1,1,10,100")
        b.set_defaults(func=fn)

    a = sub.add_parser("analyze", help="edge list and role weights of a checkpoint")
    common(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    a.add_argument("--truth", default=None, help="true edge file written by synth")
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("bound", help="evaluate the generalization bound")
    common(g)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--target", default=None)
    g.add_argument("--delta", type=float, default=0.05)
    g.add_argument("--gamma", type=float, default=1.0)
    g.add_argument("--s", type=float, default=1.0)
    g.add_argument("--B", type=float, default=None)
    g.add_argument("--kappa", type=float, default=None)
    g.add_argument("--appendix", action="store_true", help="use the 2/N bracket coefficient")
    g.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CastleError, ArithmeticError) as exc:
        print(f"castle: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"castle: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1


if __name__ == "__main__":
    sys.exit(main())
