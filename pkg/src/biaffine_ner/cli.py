"""Command line entry point: ``bner <command> [options]``.

Exit codes: 0 success, 2 input error, 3 configuration mismatch,
4 internal invariant violation (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, gradcheck, synthetic
from .autodiff import DimensionError
from .config import PRESETS, ConfigError, TrainConfig, apply_overrides, load_config
from .data import AnnotatedSentence, DataFormatError, read_corpus_file, write_conll, write_spans
from .decoder import DecodeMode, decode, is_flat, is_nested
from .embeddings import EmbeddingDataError, load_static_embeddings, read_contextual
from .evaluation import evaluate, report_table
from .model import STATIC_PARAM, BiaffineNER
from .scorer import read_score_dump
from .training import TrainingError, evaluate_split, fit, predict_split, prepare_split

log = logging.getLogger("biaffine_ner")

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH, EXIT_INTERNAL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _mismatch(message: str) -> CliError:
    return CliError(message, EXIT_MISMATCH)


# ---------------------------------------------------------------------------
# helpers


def _read_corpus(path: str) -> list[AnnotatedSentence]:
    if not Path(path).is_file():
        raise CliError(f"{path}: no such file")
    return read_corpus_file(path)


def _build_config(args) -> TrainConfig:
    cfg = TrainConfig(**PRESETS[args.preset]) if args.preset else TrainConfig()
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(f"{args.config}: no such config file")
        cfg = load_config(args.config, base=cfg)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = cfg.replace(**changes)
    return apply_overrides(cfg, args.set or [])


def _check_contextual(path: str | None, cfg: TrainConfig):
    if path is None:
        if cfg.use_contextual:
            raise _mismatch("use_contextual is on but no contextual vector file was given")
        return None
    if not cfg.use_contextual:
        raise _mismatch("a contextual vector file was given but use_contextual is off")
    vectors = read_contextual(path)
    if vectors.dim != cfg.contextual_dim:
        raise _mismatch(f"{path}: contextual dim {vectors.dim}, model expects {cfg.contextual_dim}")
    return vectors


def _load_static(path: str, cfg: TrainConfig, tokens) -> object:
    if not Path(path).is_file():
        raise CliError(f"{path}: no such file")
    table = load_static_embeddings(path, restrict_to=tokens)
    if table.dim != cfg.static_dim:
        raise _mismatch(f"{path}: static embeddings have dim {table.dim}, config expects {cfg.static_dim}")
    return table


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _build_config(args)
    train = _read_corpus(args.train)
    dev = _read_corpus(args.dev) if args.dev else []
    test = _read_corpus(args.test) if args.test else []
    ctx = {"train": _check_contextual(args.contextual_train, cfg)}
    if cfg.use_contextual:
        ctx["dev"] = _check_contextual(args.contextual_dev, cfg) if dev else None
        ctx["test"] = _check_contextual(args.contextual_test, cfg) if test else None
    if cfg.train_on_dev and dev:
        if cfg.use_contextual:
            raise CliError("train_on_dev with contextual vectors is not supported; merge the files instead")
        train, dev = train + dev, []
    tokens = {t for s in train + dev + test for t in s.tokens}
    static = _load_static(args.static_embeddings, cfg, tokens) if args.static_embeddings and cfg.use_static else None
    categories = sorted({e.category for s in train + dev for e in s.gold})
    model = BiaffineNER.build(cfg, train + dev + test, static, categories)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        def on_epoch(row: dict) -> None:
            metrics.write(json.dumps(row, sort_keys=True) + "\n")
            metrics.flush()
        result = fit(model, train, dev, threads=args.threads, contextual=ctx, on_epoch=on_epoch)
    checkpoint.save(model, out / "model.bner")

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "corpora": {"train": args.train, "dev": args.dev, "test": args.test},
        "checkpoint": "model.bner",
        "metrics": "metrics.jsonl",
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
    }
    if test:
        with ThreadPoolExecutor(args.threads) if args.threads > 1 else nullcontext() as pool:
            unlabeled = [AnnotatedSentence(s.sentence, set()) for s in test]
            rep = evaluate_split(model, test, prepare_split(model, unlabeled, ctx.get("test")), cfg.mode, pool)
        manifest["test"] = json.loads(rep.to_json())
        print(report_table([("test", rep)]))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs, kept epoch {result.best_epoch}; "
          f"final loss {last['loss']:.6f}" + (f", train F1 {100 * last['train_f1']:.1f}" if "train_f1" in last else ""))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = checkpoint.load(args.checkpoint) if Path(args.checkpoint).is_file() else None
    if model is None:
        raise CliError(f"{args.checkpoint}: no such checkpoint")
    cfg = model.config
    mode = DecodeMode.parse(args.mode or cfg.mode)
    if args.conll_out and mode is not DecodeMode.FLAT:
        raise CliError("--conll-out needs flat mode")
    sentences = _read_corpus(args.input)
    ctx = _check_contextual(args.contextual, cfg)
    if args.static_embeddings:
        if not cfg.use_static:
            raise _mismatch("the checkpoint does not use static embeddings")
        table = _load_static(args.static_embeddings, cfg, {t for s in sentences for t in s.tokens})
        _extend_vocabulary(model, table)
    data = prepare_split(model, [AnnotatedSentence(s.sentence, set()) for s in sentences], ctx)
    with ThreadPoolExecutor(args.threads) if args.threads > 1 else nullcontext() as pool:
        preds = predict_split(model, data, mode, pool)
    check = is_flat if mode is DecodeMode.FLAT else is_nested
    for s, p in zip(sentences, preds):
        if not check(p):
            raise CliError(f"sentence {s.id}: decoded spans violate {mode.value} constraints", EXIT_INTERNAL)
    out = [AnnotatedSentence(s.sentence, p) for s, p in zip(sentences, preds)]
    write_spans(out, args.out)
    if args.conll_out:
        write_conll(out, args.conll_out)
    log.info("wrote %d sentences to %s", len(out), args.out)
    return EXIT_OK


def _extend_vocabulary(model: BiaffineNER, table) -> None:
    """Append rows for words the checkpoint has never seen; known rows stay untouched."""
    new = [w for w in sorted(table.vocabulary) if w not in model.word_index]
    if not new:
        return
    rows = np.vstack([table.matrix[table.vocabulary[w]] for w in new])
    base = model.params[STATIC_PARAM]
    for k, w in enumerate(new):
        model.word_index[w] = len(base) + k
    model.params[STATIC_PARAM] = np.vstack([base, rows])


def cmd_evaluate(args) -> int:
    gold = _read_corpus(args.gold)
    pred = _read_corpus(args.pred)
    if len(gold) != len(pred):
        raise CliError(f"{args.gold} has {len(gold)} sentences, {args.pred} has {len(pred)}")
    for g, p in zip(gold, pred):
        if g.tokens != p.tokens:
            raise CliError(f"sentence {g.id}: tokens differ between gold and prediction")
    rep = evaluate([s.gold for s in gold], [s.gold for s in pred])
    if args.json:
        print(rep.to_json())
        return EXIT_OK
    print(report_table([("all", rep)]))
    for cat, sc in rep.per_category.items():
        print(f"  {cat}: P {100 * sc.precision:.1f}  R {100 * sc.recall:.1f}  F1 {100 * sc.f1:.1f}"
              f"  (gold {sc.gold}, predicted {sc.predicted}, correct {sc.correct})")
    return EXIT_OK


def cmd_decode(args) -> int:
    if not Path(args.dump).is_file():
        raise CliError(f"{args.dump}: no such file")
    try:
        tensor = read_score_dump(args.dump)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    c = tensor.n_categories
    names = args.categories.split(",") if args.categories else [str(k) for k in range(1, c)]
    if len(names) != c - 1:
        raise _mismatch(f"dump has {c - 1} entity categories, --categories names {len(names)}")
    spans = decode(tensor, args.mode)
    for sp in sorted(spans, key=lambda x: (x.start, x.end)):
        _print_json({"start": sp.start, "end": sp.end, "category": names[sp.category - 1],
                     "score": round(float(sp.score), 6)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.seed, args.entries)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<22} {r.checked:>4}/{r.size:<5} rel.err {r.error:.2e}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"{len(bad)} parameter groups exceed {gradcheck.TOLERANCE:g}: {', '.join(bad)}")
        return EXIT_INTERNAL
    print(f"all {len(results)} parameter groups below {gradcheck.TOLERANCE:g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.format == "conll" and args.kind == "nested":
        raise CliError("nested entities cannot be written as CoNLL BIO")
    corpus = synthetic.synthetic_corpus(args.kind, args.size, args.test_size, seed=args.seed, n_dev=args.dev_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "jsonl" if args.format == "jsonl" else "conll"
    for split, sentences in corpus.splits.items():
        if not sentences:
            continue
        path = out / f"{split}.{ext}"
        (write_spans if ext == "jsonl" else write_conll)(sentences, path)
        print(f"{path}: {len(sentences)} sentences")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bner", description="Biaffine span-based named entity recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--mode", choices=["nested", "flat"])
        sp.add_argument("--threads", type=int, default=1, help="worker threads for prediction")
        if config:
            sp.add_argument("--config", help="key=value config file")
            sp.add_argument("--preset", choices=sorted(PRESETS))
            sp.add_argument("--seed", type=int)
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--train", required=True)
    t.add_argument("--dev")
    t.add_argument("--test")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--static-embeddings")
    t.add_argument("--contextual-train")
    t.add_argument("--contextual-dev")
    t.add_argument("--contextual-test")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="tag a corpus with a trained model")
    common(pr, config=False)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True, help="JSON-lines output")
    pr.add_argument("--conll-out", help="also write BIO tags (flat mode only)")
    pr.add_argument("--static-embeddings")
    pr.add_argument("--contextual")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="exact-match P/R/F1 of predictions against gold")
    e.add_argument("--gold", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("decode", help="decode a SCOR score dump")
    d.add_argument("dump")
    d.add_argument("--mode", choices=["nested", "flat"], default="nested")
    d.add_argument("--categories", help="comma-separated names of categories 1..c-1")
    d.set_defaults(func=cmd_decode)

    g = sub.add_parser("gradcheck", help="finite-difference check on a small network")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--entries", type=int, default=24, help="sampled entries per parameter group")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--kind", choices=["flat", "nested"], default="flat")
    s.add_argument("--size", type=int, default=200)
    s.add_argument("--dev-size", type=int, default=0)
    s.add_argument("--test-size", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["jsonl", "conll"], default="jsonl")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("BNER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("bner: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"bner: {exc}", file=sys.stderr)
        return exc.code
    except (DimensionError, AssertionError) as exc:
        print(f"bner: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (OSError, DataFormatError, ConfigError, EmbeddingDataError, TrainingError,
            checkpoint.CheckpointError, ValueError) as exc:
        print(f"bner: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
