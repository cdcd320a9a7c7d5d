"""Command-line entry point.

Exit status is 0 on success, 1 when a check fails or input data is invalid,
and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys
from typing import Optional, Sequence

import numpy as np

from .datasets import TASKS, DatasetError, deserialize, generate, serialize
from .equivalence import TOLERANCE, check_equivalence
from .harness import (DivergenceError, SCALES, TrainConfig, evaluate, results_dir, run_experiment,
                      train)
from .kernelspace import DEFAULT_GRID, FeatureMap, emit_contour_grid, kernel_suite
from .layers import MlpBlock
from .models import ARCHS, GnnModel

log = logging.getLogger("sirgcn")


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_generate(args) -> int:
    data = generate(args.task, args.size, args.seed, args.train_count, args.test_count)
    path = serialize(data, args.out)
    print(f"wrote {len(data.train)} train / {len(data.test)} test {args.task} graphs to {path}")
    return 0


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    flags = {"arch": args.arch, "task": args.task, "task_size": args.size, "seed": args.seed,
             "max_epochs": args.epochs, "lr": args.lr, "train_count": args.train_count,
             "test_count": args.test_count}
    base.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.from_dict(base)


def _cmd_train(args) -> int:
    config = _train_config(args)
    data = deserialize(args.data) if args.data else None
    if data is not None and (data.task, data.size) != (config.task, config.task_size):
        raise DatasetError(f"dataset is {data.task} size {data.size}, config wants "
                           f"{config.task} size {config.task_size}")
    try:
        model, record = train(config, data)
    except DivergenceError as exc:
        _print(exc.record.to_dict())
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.npz")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    (out / "metrics.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")
    print(f"{record.metric_name} {record.test_metric:.6g} after {record.epochs_run} epochs; "
          f"saved to {out}")
    return 0


def _cmd_eval(args) -> int:
    model = GnnModel.load(args.model)
    data = deserialize(args.data)
    metric = evaluate(model, data.graphs(args.split), data.task)
    _print({"task": data.task, "split": args.split,
            "metric": "accuracy" if data.task == "dictlookup" else "mse", "value": metric})
    return 0


def _cmd_reproduce(args) -> int:
    sizes = args.n if args.table == 1 else args.c
    table = run_experiment(args.table, archs=args.arch or ARCHS, sizes=sizes, trials=args.trials,
                           scale=args.scale, base_seed=args.seed,
                           **({"max_epochs": args.epochs} if args.epochs else {}))
    out = Path(args.out) if args.out else results_dir()
    csv_path, json_path = table.write(out)
    print(table.format())
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _cmd_verify_kernel(args) -> int:
    reports = kernel_suite(seed=args.seed, trials=args.trials)
    for r in reports:
        name = r.get("check", "embedding_identity")
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['metric']:<18} {name}")
    if args.json:
        _print(reports)
    return 0 if all(r["pass"] for r in reports) else 1


def _cmd_equivalence(args) -> int:
    which = sorted(TOLERANCE) if args.which == "all" else [args.which]
    ok = True
    for w in which:
        r = check_equivalence(w, num_graphs=args.graphs, seed=args.seed)
        ok &= r["pass"]
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {w:<6} max deviation {r['max_deviation']:.3e} "
              f"(tolerance {r['tolerance']:g})")
    return 0 if ok else 1


def _feature_map(kind: str, seed: int, hidden: int) -> FeatureMap:
    if kind == "identity":
        return FeatureMap.identity()
    if kind == "neg_square":
        return FeatureMap.neg_square()
    block = MlpBlock([1, hidden, 1], rng=np.random.default_rng(seed))
    return FeatureMap.mlp(block) if kind == "mlp" else FeatureMap.affine_shift(block)


def _cmd_contour(args) -> int:
    g = _feature_map(args.map, args.seed, args.hidden)
    grid = emit_contour_grid(g, 2, (args.low, args.high, args.resolution))
    path = grid.write_tsv(args.out)
    print(f"wrote {args.resolution}x{args.resolution} grid for g={args.map} to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sirgcn", description="SIR-GCN graph learning lab")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate and serialize a dataset")
    g.add_argument("--task", choices=TASKS, required=True)
    g.add_argument("--size", type=int, required=True, help="n (dictlookup) or c (heterophily)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-count", type=int, default=4000)
    g.add_argument("--test-count", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--arch", choices=ARCHS)
    t.add_argument("--task", choices=TASKS)
    t.add_argument("--size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--train-count", type=int)
    t.add_argument("--test-count", type=int)
    t.add_argument("--data", help="dataset directory written by `generate`")
    t.add_argument("--out", required=True)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.set_defaults(func=_cmd_eval)

    r = sub.add_parser("reproduce", help="rerun a results table")
    r.add_argument("--table", type=int, choices=(1, 2), required=True)
    r.add_argument("--scale", choices=sorted(SCALES), default="desk")
    r.add_argument("--arch", choices=ARCHS, action="append")
    r.add_argument("--n", type=int, action="append", help="dictlookup size (repeatable)")
    r.add_argument("--c", type=int, action="append", help="heterophily classes (repeatable)")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--epochs", type=int)
    r.add_argument("--out", help="results directory (default: $SIRGCN_RESULTS_DIR or ./results)")
    r.set_defaults(func=_cmd_reproduce)

    k = sub.add_parser("verify-kernel", help="multiset kernel property checks")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--trials", type=int, default=200)
    k.add_argument("--json", action="store_true", help="also print the full reports")
    k.set_defaults(func=_cmd_verify_kernel)

    q = sub.add_parser("equivalence", help="check the SIR-GCN reductions of GIN/GraphSAGE/GATv2")
    q.add_argument("--which", choices=(*sorted(TOLERANCE), "all"), default="all")
    q.add_argument("--graphs", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=_cmd_equivalence)

    c = sub.add_parser("contour", help="write a two-neighbour hash grid as TSV")
    c.add_argument("--map", choices=("identity", "neg_square", "mlp", "affine_shift"),
                   default="identity")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--hidden", type=int, default=16)
    c.add_argument("--low", type=float, default=DEFAULT_GRID[0])
    c.add_argument("--high", type=float, default=DEFAULT_GRID[1])
    c.add_argument("--resolution", type=int, default=DEFAULT_GRID[2])
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_contour)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.command == "reproduce":
        sizes = args.n if args.table == 1 else args.c
        other = args.c if args.table == 1 else args.n
        if other:
            parser.error("use --n with --table 1 and --c with --table 2")
        if sizes and any(s < 1 for s in sizes):
            parser.error("sizes must be positive")
    if args.command == "train" and not args.config and None in (args.arch, args.task, args.size):
        parser.error("train needs --config or all of --arch, --task and --size")
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
