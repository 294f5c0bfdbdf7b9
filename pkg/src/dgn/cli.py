"""Command-line entry point: ``dgn <subcommand> ...``.

Exit status is 0 on success, 2 for unreadable or malformed inputs, 3 for
inconsistent configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import hotpot_io
from .embeddings import EmbeddingFormatError, load_embeddings
from .graph_builder import build_graph
from .hotpot_io import DatasetFormatError, FormatError, parse_dataset, write_atomic
from .model import ConfigError, check_params
from .prefilter import eval_recall_sweep
from .train_eval import TrainConfig, aggregate_metrics, predict, score_dataset, train

log = logging.getLogger("dgn")

EXIT_INPUT = 2
EXIT_CONFIG = 3


class InputError(Exception):
    pass


def _kebab(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser, only=None):
    group = parser.add_argument_group("model and training settings")
    for f in dataclasses.fields(TrainConfig):
        if only is not None and f.name not in only:
            continue
        if f.type in ("bool", bool):
            group.add_argument(_kebab(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS)
        else:
            kind = float if f.type in ("float", float) else int
            group.add_argument(_kebab(f.name), dest=f.name, type=kind, default=argparse.SUPPRESS,
                               metavar=f.name.upper())


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _require_file(path, what):
    if path is None or not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise InputError(f"{what} {path!r} is not a readable file")


def _read_config_file(path):
    if path is None:
        return {}
    _require_file(path, "config file")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError(f"config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in raw.items()}


def resolve_config(args, base: dict | None = None) -> TrainConfig:
    """Checkpoint snapshot, then config file, then explicit flags."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    values = dict(base or {})
    file_values = _read_config_file(getattr(args, "config", None))
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown settings in config file: {sorted(unknown)}")
    values.update(file_values)
    values.update({k: v for k, v in vars(args).items() if k in known})
    try:
        return TrainConfig.from_dict(values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _write_output(path, payload: bytes):
    if path is None or path == "-":
        sys.stdout.write(payload.decode("utf-8"))
    else:
        write_atomic(path, payload)


def _load_dataset(path):
    _require_file(path, "dataset")
    return parse_dataset(path)


def _load_table(path):
    _require_file(path, "embeddings")
    return load_embeddings(path)


def _load_checkpoint(path, table):
    _require_file(path, "checkpoint")
    params, snapshot, seed = hotpot_io.load_checkpoint(path)
    dim = snapshot.get("dim")
    if dim is not None and dim != table.dimension:
        raise ConfigError(f"checkpoint dimension {dim} does not match embedding dimension {table.dimension}")
    return params, snapshot, seed


def _figure_path(args, name):
    if not getattr(args, "figure_dir", None):
        return None
    return os.path.join(args.figure_dir, name)


# -- subcommands ---------------------------------------------------------------


def _graph_job(task):
    example, cache_dir = task
    path = hotpot_io.graph_cache_path(cache_dir, example.id)
    write_atomic(path, hotpot_io.cache_graph(build_graph(example)))
    return path


def cmd_build_graph(args) -> int:
    cache_dir = args.cache_dir or os.environ.get("DGN_CACHE")
    if not cache_dir:
        raise InputError("no cache directory: pass --cache-dir or set DGN_CACHE")
    os.makedirs(cache_dir, exist_ok=True)
    if not os.access(cache_dir, os.W_OK):
        raise InputError(f"cache directory {cache_dir!r} is not writable")
    examples = _load_dataset(args.dataset)
    tasks = [(ex, cache_dir) for ex in examples]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            written = list(pool.map(_graph_job, tasks, chunksize=32))
    else:
        written = [_graph_job(t) for t in tasks]
    _write_output(args.output, _json_bytes({"graphs": len(written), "cache_dir": cache_dir}))
    return 0


def cmd_prefilter_eval(args) -> int:
    cfg = resolve_config(args)
    examples = _load_dataset(args.dataset)
    table = _load_table(args.embeddings)
    if not examples:
        raise InputError("dataset is empty")
    ks = args.sweep or [cfg.k]
    reports = [r.to_json() for r in eval_recall_sweep(examples, table, cfg.m, ks, jobs=args.jobs,
                                                      remove_stop_words=cfg.remove_stop_words)]
    figure = _figure_path(args, "prefilter_recall.png")
    if figure:
        from .plotting import plot_recall_sweep

        plot_recall_sweep(reports, figure)
    _write_output(args.output, _json_bytes(reports[0] if not args.sweep else reports))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    examples = _load_dataset(args.dataset)
    table = _load_table(args.embeddings)
    dev = _load_dataset(args.dev) if args.dev else None
    if not examples:
        raise InputError("training set is empty")
    try:
        cfg.model_config(table.dimension)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = train(examples, table, cfg, dev=dev, eval_train=args.eval_train)
    snapshot = dict(cfg.to_dict(), dim=table.dimension)
    write_atomic(args.checkpoint, hotpot_io.save_checkpoint(result.params, snapshot, cfg.seed))
    log_lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.log)
    log_path = args.log or args.checkpoint + ".log.jsonl"
    write_atomic(log_path, log_lines.encode("utf-8"))
    figure = _figure_path(args, "training_curve.png")
    if figure:
        from .plotting import plot_training_curve

        plot_training_curve(result.log, figure)
    summary = {"checkpoint": args.checkpoint, "log": log_path, "epochs": len(result.log),
               "final_loss": result.log[-1]["mean_loss"], "skipped": len(result.skipped)}
    _write_output(args.output, _json_bytes(summary))
    return 0


def _restore(args):
    table = _load_table(args.embeddings)
    params, snapshot, _ = _load_checkpoint(args.checkpoint, table)
    cfg = resolve_config(args, base=snapshot)
    try:
        check_params(params, cfg.model_config(table.dimension))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return table, params, cfg


def cmd_eval(args) -> int:
    examples = _load_dataset(args.dataset)
    table, params, cfg = _restore(args)
    scored = score_dataset(params, examples, table, cfg)
    metrics = aggregate_metrics(({k for k, p in probs.items() if p > cfg.threshold}, ex.gold)
                                for ex, probs in scored)
    figure = _figure_path(args, "probabilities.png")
    if figure:
        from .plotting import plot_probability_histogram

        pos = [p for ex, probs in scored for k, p in probs.items() if k in ex.gold]
        neg = [p for ex, probs in scored for k, p in probs.items() if k not in ex.gold]
        plot_probability_histogram(pos, neg, cfg.threshold, figure)
    _write_output(args.output, _json_bytes(metrics.to_json()))
    return 0


def cmd_predict(args) -> int:
    examples = _load_dataset(args.dataset)
    table, params, cfg = _restore(args)
    matches = [ex for ex in examples if ex.id == args.id]
    if not matches:
        raise LookupError(f"no example with id {args.id!r}")
    ranked = predict(params, matches[0], table, cfg, above_threshold=not args.all)
    if args.with_probability:
        out = [[t, i, p] for (t, i), p in ranked]
    else:
        out = [[t, i] for (t, i), _ in ranked]
    _write_output(args.output, _json_bytes(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgn", description="Supporting-fact identification with document graphs.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, embeddings=True, checkpoint=False):
        p.add_argument("--dataset", required=True, help="HotpotQA-format JSON file")
        if embeddings:
            p.add_argument("--embeddings", required=True, help="word vectors, one 'token v1 ... vD' per line")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--output", "-o", help="report path (default: stdout)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("build-graph", help="build and cache one document graph per example")
    common(p, embeddings=False)
    p.add_argument("--cache-dir", help="defaults to $DGN_CACHE")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("prefilter-eval", help="recall of the similarity prefilter")
    common(p)
    p.add_argument("--sweep", type=int, nargs="+", metavar="K", help="report several k values at once")
    p.add_argument("--figure-dir")
    _add_config_flags(p, only={"m", "k", "remove_stop_words"})
    p.set_defaults(func=cmd_prefilter_eval)

    p = sub.add_parser("train", help="train on gold supporting facts")
    common(p, checkpoint=True)
    p.add_argument("--dev", help="development set for per-epoch F1 and early stopping")
    p.add_argument("--log", help="epoch log path (JSON lines)")
    p.add_argument("--eval-train", action="store_true", help="record training-set F1 every epoch")
    p.add_argument("--figure-dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="supporting-fact precision / recall / F1")
    common(p, checkpoint=True)
    p.add_argument("--figure-dir")
    _add_config_flags(p, only={"m", "k", "threshold"})
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predicted supporting facts of one example")
    common(p, checkpoint=True)
    p.add_argument("--id", required=True, help="example id")
    p.add_argument("--all", action="store_true", help="list every candidate, not only those over the threshold")
    p.add_argument("--with-probability", action="store_true")
    _add_config_flags(p, only={"m", "k", "threshold"})
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dgn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, DatasetFormatError, EmbeddingFormatError, FormatError, LookupError, OSError) as exc:
        print(f"dgn: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
