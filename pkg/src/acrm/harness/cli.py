"""Command-line entry point: train, eval, infer, synth, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..data import DataError, SynthConfig, load_annotations, load_features, load_split, make_instance, write_synthetic
from ..encoders import PAD, UNK, EmbeddingTable, load_embeddings
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import VARIANTS, load_config
from .training import TrainingError, evaluate_model, from_checkpoint, prediction_record, score_instances, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("acrm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acrm", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model with early stopping")
    p.add_argument("--config", type=Path)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--eval", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, help="GloVe-style text file; omitted words are random")
    p.add_argument("--log", type=Path, help="per-epoch JSON-lines log (default: <out>.log.jsonl)")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--d", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalization", choices=["tanh", "gauss"])
    p.add_argument("--interaction", choices=["mul", "sub", "concat"])
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--tied-lstm", action="store_true")
    p.add_argument("--strict-mean", action="store_true")
    p.add_argument("--strict", action="store_true", help="fail on malformed annotation lines")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--ann", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--iou", type=_floats, default=None)
    p.add_argument("--topk", type=_ints, default=None)
    p.add_argument("--report", type=Path, help="EvalReport JSON path (default: <checkpoint>.eval.json)")

    p = sub.add_parser("infer", help="predict moments for an annotation file")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--ann", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-scores", action="store_true")
    p.add_argument("--dump-attention", action="store_true")

    p = sub.add_parser("synth", help="write a planted-moment synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    defaults = SynthConfig()
    p.add_argument("--num", type=int, default=defaults.num_instances)
    p.add_argument("--num-eval", type=int, default=None)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--t-min", type=int, default=defaults.t_min)
    p.add_argument("--t-max", type=int, default=defaults.t_max)
    p.add_argument("--d-in", type=int, default=defaults.d_in)
    p.add_argument("--vocab-size", type=int, default=defaults.vocab_size)
    p.add_argument("--signal-words", type=int, default=defaults.num_signal_words)
    p.add_argument("--query-len-min", type=int, default=defaults.query_len_min)
    p.add_argument("--query-len-max", type=int, default=defaults.query_len_max)
    p.add_argument("--moment-min", type=int, default=defaults.moment_min)
    p.add_argument("--moment-max", type=int, default=defaults.moment_max)
    p.add_argument("--signal", type=float, default=defaults.signal)
    p.add_argument("--noise", type=float, default=defaults.noise_std)
    p.add_argument("--distractors", type=int, default=defaults.num_distractors)
    p.add_argument("--embed-dim", type=int, default=defaults.embed_dim)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _table_for(vocabulary, embed_dim: int, seed: int, path: Path | None) -> EmbeddingTable:
    if path is not None:
        return load_embeddings(path, vocabulary, embed_dim, seed)
    rng = np.random.default_rng(seed)
    words = [PAD, UNK] + list(vocabulary)
    matrix = np.zeros((len(words), embed_dim))
    matrix[1:] = rng.uniform(-0.1, 0.1, (len(words) - 1, embed_dim))
    return EmbeddingTable(words, matrix)


def cmd_train(args) -> int:
    overrides = {
        k: getattr(args, k)
        for k in ("d", "lam", "lr", "batch_size", "dropout", "max_epochs", "patience", "seed",
                  "normalization", "interaction")
    }
    overrides["embed_dim"] = args.embed_dim
    if args.variant:
        overrides["interaction"], overrides["normalization"] = VARIANTS[args.variant]
    if args.no_attention:
        overrides["attention"] = False
    if args.tied_lstm:
        overrides["tied_lstm"] = True
    if args.strict_mean:
        overrides["strict_mean"] = True
    cfg = load_config(args.config, **overrides)
    train_split = load_split(args.train, args.features, strict=args.strict)
    if not train_split.instances:
        raise DataError(f"{args.train}: no usable training instances")
    eval_split = load_split(args.eval, args.features, train_split.d_in, train_split.vocabulary, args.strict)
    table = _table_for(train_split.vocabulary, cfg.embed_dim, cfg.seed, args.embeddings)
    log_path = args.log or args.out.with_name(args.out.name + ".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg.to_dict(), "warnings": dict(train_split.warnings)}) + "\n")

        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            print(f"epoch {rec['epoch']:3d}  L={rec['L']:.4f}  L_c={rec['L_c']:.4f}  "
                  f"L_I={rec['L_I']:.4f}  mIoU={rec['mIoU']:.4f}  ({rec['wall_time']:.1f}s)")

        result = train(cfg, train_split, eval_split, table, on_epoch)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, args.out)
    print(f"best epoch {result.best_epoch}; checkpoint written to {args.out}")
    if result.best_report is not None:
        print(result.best_report.table())
    return EXIT_OK


def _load_model(path: Path):
    try:
        return from_checkpoint(load_checkpoint(path))
    except (CheckpointError, OSError) as exc:
        raise DataError(str(exc)) from None


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    changes = {}
    if args.iou:
        changes["iou_thresholds"] = tuple(args.iou)
    if args.topk:
        changes["topk"] = tuple(args.topk)
    if changes:
        model.cfg = model.cfg.override(**changes)
    split = load_split(args.ann, args.features, model.d_in, model.table.words)
    if not split.instances:
        raise DataError(f"{args.ann}: nothing to evaluate")
    report = evaluate_model(model, split)
    print(report.table())
    out = args.report or args.checkpoint.with_name(args.checkpoint.name + ".eval.json")
    out.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    records = load_annotations(args.ann)
    cache: dict[str, np.ndarray] = {}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            try:
                if rec["video"] not in cache:
                    cache[rec["video"]] = load_features(args.features, rec["video"], model.d_in)
                inst = make_instance(rec, cache[rec["video"]], Counter())
            except (DataError, OSError) as exc:
                out = {"video": rec["video"], "query": rec["query"], "error": str(exc)}
            else:
                sc = score_instances(model, [inst], k=1)[0]
                out = prediction_record(inst, sc, args.dump_scores, args.dump_attention)
            fh.write(json.dumps(out) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_instances=args.num, t_min=args.t_min, t_max=args.t_max, d_in=args.d_in,
        vocab_size=args.vocab_size, num_signal_words=args.signal_words,
        query_len_min=args.query_len_min, query_len_max=args.query_len_max,
        moment_min=args.moment_min, moment_max=args.moment_max, signal=args.signal,
        noise_std=args.noise, num_distractors=args.distractors, embed_dim=args.embed_dim, seed=args.seed,
    )
    paths = write_synthetic(cfg, args.out, args.num_eval)
    for key, path in paths.items():
        print(f"{key:<11} {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_gradcheck

    results = run_gradcheck(args.trials, args.seed)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.variant] = max(worst.get(r.variant, 0.0), r.max_error)
    ok = True
    for name, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<13} max rel err {err:.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "synth": cmd_synth, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, nx.NumericalError) as exc:
        ids = getattr(exc, "ids", [])
        print(f"numerical failure: {exc}" + (f" (instances: {ids})" if ids else ""), file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
