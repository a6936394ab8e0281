"""Command-line entry point: ``nesyprune <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import fields
from pathlib import Path

from .abduction import PreimageLimitError, abduce_dataset
from .core import DatasetError, load_dataset, load_embeddings, save_dataset
from .proximity import METRICS, candidate_edges
from .pruner import COUPLINGS, InvariantError, aggregate_stats, oracle_check, prune_dataset
from .report import report, write_report
from .trainer import (
    MODES,
    ClassifierModel,
    SynthTask,
    TrainConfig,
    TrainingError,
    evaluate,
    load_test_set,
    save_run,
    synth_generate,
    train,
    write_synth,
)

EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT = 0, 2, 3


def _write_json(obj, path: str | Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _require_preimages(dataset) -> None:
    missing = [s.id for s in dataset.samples if not s.preimages]
    if missing:
        raise DatasetError(f"{len(missing)} sample(s) have no pre-images; run 'abduce' first", sample_id=missing[0])


def cmd_abduce(args) -> int:
    ds = load_dataset(args.dataset)
    out, rejected = abduce_dataset(ds, limit=args.max_preimages)
    save_dataset(out, args.out)
    print(json.dumps({"samples": out.n, "rejected": rejected}))
    return EXIT_OK


def cmd_knn(args) -> int:
    ds = load_dataset(args.dataset)
    emb = load_embeddings(args.embeddings)
    emb.check_covers(ds)
    size = args.batch_size or ds.n
    batches = []
    for start in range(0, ds.n, size):
        batch = list(ds.samples[start : start + size])
        if len(batch) < 2:
            continue
        batches.append(candidate_edges(batch, emb, k=args.k, metric=args.metric, theta=args.theta).to_json(batch))
    _write_json({"batches": batches}, args.out)
    return EXIT_OK


def cmd_prune(args) -> int:
    ds = load_dataset(args.dataset)
    _require_preimages(ds)
    emb = load_embeddings(args.embeddings)
    pruned, results = prune_dataset(
        ds, emb, args.batch_size, k=args.k, metric=args.metric, theta=args.theta, coupling=args.coupling
    )
    save_dataset(pruned, args.out)
    stats = {
        "batches": [r.stats.to_json() for r in results],
        "aggregate": aggregate_stats([r.stats for r in results]),
    }
    if args.stats:
        _write_json(stats, args.stats)
    if args.dump_incidence:
        _write_json(
            [{"samples": [s.id for s in r.pruned], "incidence": r.incidence.to_json()} for r in results],
            args.dump_incidence,
        )
    agg = stats["aggregate"]
    print(json.dumps({k: agg[k] for k in ("n_batches", "retained_pct", "gold_retained_pct", "prune_seconds")}))
    return EXIT_OK


def cmd_synth(args) -> int:
    task = SynthTask(
        theory=args.theory,
        arity=args.arity,
        n_samples=args.n_samples,
        classes=args.classes,
        dim=args.dim,
        noise=args.noise,
        separation=args.separation,
        n_test=args.n_test,
    )
    paths = write_synth(synth_generate(task, args.seed), args.out_dir)
    cfg = {"dataset": paths["dataset"].name, "features": paths["embeddings"].name, "test": paths["test"].name}
    cfg_path = Path(args.out_dir) / "config.json"
    _write_json(cfg, cfg_path)
    print(json.dumps({k: str(v) for k, v in {**paths, "config": cfg_path}.items()}))
    return EXIT_OK


TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def load_train_config(path: str | Path, **overrides) -> tuple[TrainConfig, dict[str, Path]]:
    """Read a training config JSON: data paths plus any :class:`TrainConfig` fields.

    Relative data paths resolve against the config file's directory.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if "dataset" not in raw or "features" not in raw:
        raise ValueError(f"{path}: config needs 'dataset' and 'features'")
    unknown = set(raw) - TRAIN_KEYS - {"dataset", "features", "test", "embeddings"}
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    data = {k: path.parent / raw[k] for k in ("dataset", "features", "test", "embeddings") if raw.get(k)}
    params = {k: v for k, v in raw.items() if k in TRAIN_KEYS}
    params.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**params), data


def cmd_train(args) -> int:
    config, data = load_train_config(args.config, mode=args.mode, seed=args.seed)
    if args.no_timing:
        config.timing = False
    ds = load_dataset(data["dataset"])
    _require_preimages(ds)
    features = load_embeddings(data["features"])
    emb = load_embeddings(data["embeddings"]) if "embeddings" in data else None
    test = load_test_set(data["test"])[1:] if "test" in data else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = train(ds, features, config, test=test, embeddings=emb)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_run(result, config, args.out_dir, extra={"config_file": str(args.config)})
    last = result.metrics[-1]
    print(json.dumps({"epochs": len(result.metrics), "accuracy": last["accuracy"], "loss": last["loss"]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = ClassifierModel.load(args.model)
    _, x, y = load_test_set(args.test)
    print(json.dumps({"accuracy": evaluate(model, x, y), "n": int(len(y))}))
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.runs)
    write_report(rep, args.out_dir)
    for p in rep.problems:
        print(f"skipped {p['path']}: {p['problem']}", file=sys.stderr)
    print(json.dumps(rep.rows))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    res = oracle_check(seeds=args.seeds, seed=args.seed, coupling=args.coupling)
    print(json.dumps({**res, "mismatches": len(res["mismatches"])}))
    if res["mismatches"]:
        _write_json(res["mismatches"], None)
        return EXIT_INVARIANT
    return EXIT_OK


def _edge_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--theta", type=float, default=None, help="use distance < theta instead of top-k")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nesyprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("abduce", help="enumerate pre-images for every sample")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-preimages", type=int, default=None)
    p.set_defaults(func=cmd_abduce)

    p = sub.add_parser("knn", help="write candidate edges")
    _edge_args(p)
    p.add_argument("--batch-size", type=int, default=None, help="default: whole dataset as one batch")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("prune", help="prune pre-images batch by batch")
    _edge_args(p)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--coupling", choices=COUPLINGS, default="implication")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--dump-incidence", default=None)
    p.set_defaults(func=cmd_prune)

    d = SynthTask()
    p = sub.add_parser("synth", help="generate a synthetic weakly supervised task")
    p.add_argument("--theory", choices=("sum", "max", "hwf"), default=d.theory)
    p.add_argument("--arity", type=int, default=d.arity)
    p.add_argument("--n-samples", type=int, default=d.n_samples)
    p.add_argument("--classes", type=int, default=d.classes)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--separation", type=float, default=d.separation)
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one run and write metrics.csv, model.npz, run.json")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-timing", action="store_true", help="leave timing columns empty for byte-stable metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved model on a test CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle-check", help="compare the exact solver with brute force on random instances")
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coupling", choices=COUPLINGS, default="implication")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DatasetError, PreimageLimitError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
