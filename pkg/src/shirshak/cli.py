"""Command-line entry point for the whole workflow.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
Every command is a thin wrapper over one module operation; finetune creates
a fresh run directory per invocation and never overwrites.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .checkpoint import load_checkpoint
from .errors import ConfigurationError, ContractError, ShirshakError
from .lora import LoraConfig
from .model import ModelConfig, attach_lora, generate as model_generate, init_model, quantize_model
from .rouge import format_report_table
from .tokenizer import SubwordTokenizer, train_tokenizer
from .trainer import TrainConfig, evaluate, finetune

ADMIN_SECRET_ENV = "SHIRSHAK_ADMIN_SECRET"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError(f"expected three comma-separated ratios, got {text!r}")
    return (parts[0], parts[1], parts[2])


def _int_pair(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigurationError(f"expected lo,hi got {text!r}")
    return (parts[0], parts[1])


def cmd_synth(args) -> None:
    records = corpus_mod.make_synthetic_corpus(
        args.n,
        args.seed,
        headline_tokens=args.headline_tokens,
        body_tokens=args.body_tokens,
        word_pool_size=args.word_pool_size,
    )
    corpus_mod.write_corpus(records, args.out)
    print(f"wrote {len(records)} synthetic records to {args.out}")


def cmd_ingest(args) -> None:
    config = corpus_mod.CleaningConfig(strict=args.strict)
    records, report = corpus_mod.ingest(args.corpus, config)
    corpus_mod.write_corpus(records, args.out)
    print(
        f"read {report.records_read} records: kept {report.kept}, "
        f"dropped_empty {report.dropped_empty}, dropped_duplicate_id {report.dropped_duplicate_id}, "
        f"malformed {report.malformed}"
    )
    print(f"wrote cleaned corpus to {args.out}")


def cmd_split(args) -> None:
    if args.n_check is not None:
        sizes = corpus_mod.split_sizes(args.n_check, args.ratios)
        print(f"{sizes[0]}/{sizes[1]}/{sizes[2]}")
        return
    if not args.corpus:
        raise ConfigurationError("split needs --corpus (or --n-check N)")
    records, _ = corpus_mod.ingest(args.corpus)
    manifest = corpus_mod.split_dataset(records, ratios=args.ratios, seed=args.seed)
    if args.out:
        manifest.save(args.out)
        print(f"wrote manifest to {args.out}")
    sizes = manifest.sizes
    print(f"train/val/test sizes: {sizes[0]}/{sizes[1]}/{sizes[2]}")


def cmd_stats(args) -> None:
    records, _ = corpus_mod.ingest(args.corpus)
    stats = corpus_mod.category_stats(records)
    width = max((len(c) for c in stats.counts), default=8)
    for category in sorted(stats.counts, key=lambda c: (-stats.counts[c], c)):
        print(f"{category:<{width}}  {stats.counts[category]:>8,}")
    print(f"{'Total':<{width}}  {stats.total:>8,}")


def cmd_train_tokenizer(args) -> None:
    records, _ = corpus_mod.ingest(args.corpus)
    if not records:
        raise ConfigurationError(f"corpus {args.corpus} has no usable records")
    texts = [r.headline for r in records] + [r.body for r in records]
    tokenizer = train_tokenizer(texts, vocab_size=args.vocab_size, task_prefix=args.task_prefix)
    tokenizer.save(args.out)
    print(
        f"trained tokenizer: vocab {tokenizer.vocab_size}, {len(tokenizer.merges)} merges -> {args.out}"
    )


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc


def _new_run_dir(base: str) -> Path:
    root = Path(base)
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = root / f"run-{stamp}"
    suffix = 1
    while candidate.exists():
        candidate = root / f"run-{stamp}-{suffix}"
        suffix += 1
    candidate.mkdir()
    return candidate


def _split_records(records, manifest):
    by_id = {r.id: r for r in records}
    pick = lambda ids: [by_id[i] for i in ids if i in by_id]
    return pick(manifest.train_ids), pick(manifest.val_ids), pick(manifest.test_ids)


def cmd_finetune(args) -> None:
    config = _load_config_file(args.config)
    corpus_path = args.corpus or config.get("corpus")
    tokenizer_path = args.tokenizer or config.get("tokenizer")
    manifest_path = args.manifest or config.get("manifest")
    if not corpus_path or not tokenizer_path or not manifest_path:
        raise ConfigurationError("finetune needs corpus, tokenizer, and manifest (flags or config file)")

    train_kwargs = dict(config.get("train", {}))
    for key, value in (
        ("epochs", args.epochs),
        ("learning_rate", args.learning_rate),
        ("batch_size", args.batch_size),
        ("seed", args.seed),
    ):
        if value is not None:
            train_kwargs[key] = value
    train_config = TrainConfig(**train_kwargs)

    records, _ = corpus_mod.ingest(corpus_path)
    tokenizer = SubwordTokenizer.load(tokenizer_path)
    manifest = corpus_mod.SplitManifest.load(manifest_path)
    train_records, val_records, _ = _split_records(records, manifest)

    model_kwargs = dict(config.get("model", {}))
    model_kwargs.setdefault("vocab_size", tokenizer.vocab_size)
    model_config = ModelConfig.from_dict(model_kwargs)
    lora_config = LoraConfig(**config.get("lora", {}))
    quant = args.quant if args.quant is not None else (config.get("quant") or {}).get("scheme")
    if quant in ("none", ""):
        quant = None

    model = init_model(model_config, seed=train_config.seed)
    if quant:
        block_size = (config.get("quant") or {}).get("block_size", 64)
        quantize_model(model, quant, block_size)
    attach_lora(model, lora_config, seed=train_config.seed)

    run_dir = _new_run_dir(args.run_root)
    effective = {
        "corpus": str(corpus_path),
        "tokenizer": str(tokenizer_path),
        "manifest": str(manifest_path),
        "model": model_config.as_dict(),
        "lora": lora_config.as_dict(),
        "train": train_config.as_dict(),
        "quant": {"scheme": quant} if quant else None,
    }
    (run_dir / "config.json").write_text(json.dumps(effective, indent=2), encoding="utf-8")
    print(f"run directory: {run_dir}")
    print(f"trainable parameters: {sum(p.data.size for p in model.trainable_parameters().values()):,}")

    reports = finetune(model, tokenizer, train_records, val_records, train_config, run_dir)
    for report in reports:
        print(
            f"epoch {report.epoch}: loss {report.mean_train_loss:.4f}, "
            f"rouge1 F1 {report.rouge.rouge1.f1:.4f}, rougeL F1 {report.rouge.rougeL.f1:.4f} "
            f"({report.seconds:.1f}s, checkpoint {report.checkpoint_path})"
        )


def cmd_generate(args) -> None:
    tokenizer = SubwordTokenizer.load(args.tokenizer)
    model = load_checkpoint(args.checkpoint, expect_tokenizer_hash=tokenizer.fingerprint())
    if args.input == "-":
        body = sys.stdin.read()
    else:
        body = Path(args.input).read_text(encoding="utf-8")
    body = corpus_mod.clean_text(body)
    ids = tokenizer.encode(body, max_len=args.max_input_len, add_prefix=True)
    out = model_generate(
        model,
        np.asarray(ids),
        bos_id=tokenizer.bos_id,
        eos_id=tokenizer.eos_id,
        max_len=args.max_len,
        beam_width=args.beam,
    )
    print(tokenizer.decode(out))


def cmd_score(args) -> None:
    tokenizer = SubwordTokenizer.load(args.tokenizer)
    model = load_checkpoint(args.checkpoint, expect_tokenizer_hash=tokenizer.fingerprint())
    records, _ = corpus_mod.ingest(args.corpus)
    if args.manifest:
        manifest = corpus_mod.SplitManifest.load(args.manifest)
        _, _, records = _split_records(records, manifest)
    if not records:
        raise ConfigurationError("no records to score")
    report = evaluate(model, records, tokenizer, batch_size=args.batch_size)
    table = format_report_table([(args.name, report)])
    print(table)
    if args.out:
        Path(args.out).write_text(
            json.dumps({"model": args.name, "rouge": report.as_dict()}, indent=2),
            encoding="utf-8",
        )
        print(f"wrote report to {args.out}")


def cmd_serve_eval(args) -> None:
    import uvicorn

    from .evalsvc import EvalStore, create_app

    secret = args.admin_secret or os.environ.get(ADMIN_SECRET_ENV)
    if not secret:
        raise ConfigurationError(
            f"an admin secret is required (--admin-secret or ${ADMIN_SECRET_ENV})"
        )
    store = EvalStore(args.data_dir)
    app = create_app(store, secret)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def cmd_aggregate(args) -> None:
    from .evalsvc import EvalStore, SessionNotFound

    store = EvalStore(args.data_dir)
    try:
        aggregate = store.aggregate(args.session)
    except SessionNotFound as exc:
        raise ConfigurationError(f"unknown session {args.session!r} in {args.data_dir}") from exc
    width = max((len(m) for m in aggregate.counts), default=8)
    print(f"{'Model':<{width}}  {'Votes':>6}  {'Percent':>8}")
    for model in sorted(aggregate.counts, key=lambda m: (-aggregate.counts[m], m)):
        print(f"{model:<{width}}  {aggregate.counts[model]:>6}  {aggregate.percentages[model]:>8.2f}")
    print(f"{'Total':<{width}}  {aggregate.total:>6}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shirshak", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--headline-tokens", type=_int_pair, default=(3, 12))
    p.add_argument("--body-tokens", type=_int_pair, default=(50, 400))
    p.add_argument("--word-pool-size", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="clean a raw corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="deterministic train/val/test split")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=_ratios, default=(0.70, 0.20, 0.10))
    p.add_argument("--n-check", type=int, default=None, help="print sizes for N records and exit")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="category counts for a corpus")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-tokenizer", help="train the subword tokenizer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task-prefix", default="सारांश: ")
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("finetune", help="LoRA fine-tuning run (new run directory)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--corpus")
    p.add_argument("--tokenizer")
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--quant", choices=["none", "int8", "int4", "nf4"])
    p.add_argument("--run-root", default="runs")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="decode a headline for one article body")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--input", required=True, help="file path or - for stdin")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--max-input-len", type=int, default=1024)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="ROUGE report for a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", help="score only the manifest's test split")
    p.add_argument("--out")
    p.add_argument("--name", default="model")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve-eval", help="run the human-evaluation service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8731)
    p.add_argument("--admin-secret")
    p.set_defaults(func=cmd_serve_eval)

    p = sub.add_parser("aggregate", help="aggregate votes for a session (offline)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--session", required=True)
    p.set_defaults(func=cmd_aggregate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ShirshakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
