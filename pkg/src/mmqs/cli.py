"""Command-line entry point: ``mmqs <subcommand> [flags]``.

Exit codes: 0 success, 1 fatal config/IO/backend error, 2 validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset import MmqsRecord, compute_stats, load_dataset
from .disorder_id import build_disorder_contexts, classify_topk, rerank_with_llm
from .errors import BackendUnavailable, ConfigError, MmqsError, ValidationError
from .filtering import filter_knowledge
from .knowledge import KnowledgeItem, KnowledgeSet, generate_context
from .pipeline import (
    PipelineConfig,
    VARIANTS,
    build_backends,
    load_run_inputs,
    run_eval,
    run_pipeline,
    summarize_record,
)

log = logging.getLogger("mmqs")

EXIT_OK, EXIT_FATAL, EXIT_INVALID = 0, 1, 2


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--dataset", help="dataset path (JSONL or CSV)")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--th", type=float, help="similarity threshold for filtering")
    p.add_argument("--temperature", type=float)
    p.add_argument("--k", type=int, help="number of candidates kept before rerank")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mock", action="store_true", default=None, help="force mock backends")
    p.add_argument("--strict", action="store_true", default=None, help="require image files to exist")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = argparse.ArgumentParser(prog="mmqs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mmqs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[shared], help="full pipeline over a dataset")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache", action="store_true", default=None)

    p = sub.add_parser("classify", parents=[shared], help="rank disorders for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--query", help="patient query; enables the LLM rerank step")

    p = sub.add_parser("context", parents=[shared], help="generate knowledge for a disorder")
    p.add_argument("--disorder", required=True)

    p = sub.add_parser("filter", parents=[shared], help="filter text against an image")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--text-file", type=Path)
    p.add_argument("--image", required=True)

    p = sub.add_parser("summarize", parents=[shared], help="summarise a single record")
    p.add_argument("--id", dest="record_id", help="record id within --dataset")
    p.add_argument("--question", help="ad-hoc query (instead of --id)")
    p.add_argument("--image", help="image for an ad-hoc query")

    p = sub.add_parser("eval", parents=[shared], help="score summaries against gold")
    p.add_argument("--summaries", required=True)
    p.add_argument("--facts", help="annotated facts sidecar (JSONL)")
    p.add_argument("--csv", action="store_true", default=None, help="also write report.csv")

    sub.add_parser("stats", parents=[shared], help="dataset statistics")
    return parser


_OVERRIDES = ("dataset", "format", "variant", "th", "temperature", "k", "out", "mock", "strict",
              "workers", "cache", "summaries", "facts", "csv")


def _config(args) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return PipelineConfig.load(args.config, overrides)


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


def _cmd_run(args, cfg):
    manifest, summaries = run_pipeline(cfg)
    counts = manifest.to_dict()["counts"]
    print(f"{counts['ok']}/{counts['records']} records summarised, {counts['errors']} errors -> {cfg.out}")


def _taxonomy_with_contexts(cfg, backends):
    taxonomy, _ = load_run_inputs(cfg)
    return build_disorder_contexts(taxonomy, backends.llm, cfg.temperature)


def _cmd_classify(args, cfg):
    backends = build_backends(cfg)
    taxonomy = _taxonomy_with_contexts(cfg, backends)
    ranked = classify_topk(backends.classifier.embed_image(args.image), taxonomy, backends.classifier, cfg.k)
    result = {"candidates": ranked.to_list()}
    if args.query:
        label = rerank_with_llm(args.query, ranked, backends.llm, cfg.rerank_template, cfg.temperature,
                                cfg.fallback_on_error)
        result["prediction"] = label.name
    else:
        result["prediction"] = ranked.labels[0].name if len(ranked) else None
    _emit(result)


def _cmd_context(args, cfg):
    backends = build_backends(cfg)
    taxonomy, prompts = load_run_inputs(cfg)
    disorder = taxonomy.get(args.disorder) or args.disorder
    _emit(generate_context(disorder, prompts, backends.llm, cfg.temperature).to_dict())


def _cmd_filter(args, cfg):
    backends = build_backends(cfg)
    text = args.text if args.text is not None else args.text_file.read_text(encoding="utf-8")
    ks = KnowledgeSet(None, (KnowledgeItem("input", text),))
    image_vec = backends.embedder.embed_image(args.image)
    _emit(filter_knowledge(ks, image_vec, backends.embedder, cfg.th, cfg.abbreviations).audit())


def _cmd_summarize(args, cfg):
    if args.record_id:
        if not cfg.dataset:
            raise ConfigError("--id needs --dataset")
        taxonomy, _ = load_run_inputs(cfg)
        records = load_dataset(cfg.dataset, cfg.format, cfg.strict, taxonomy, cfg.image_root)
        matches = [r for r in records if r.id == args.record_id]
        if not matches:
            raise ValidationError(f"no record with id {args.record_id!r}", args.record_id)
        record = matches[0]
    elif args.question:
        if cfg.variant != "text_only" and not args.image:
            raise ConfigError("--question needs --image unless --variant text_only")
        image = str(Path(args.image).resolve()) if args.image else "-"
        record = MmqsRecord("adhoc", args.question, image, "-")
    else:
        raise ConfigError("summarize needs --id or --question")
    _emit(summarize_record(cfg, record).to_dict())


def _cmd_eval(args, cfg):
    report = run_eval(cfg)
    _emit({"aggregates": report.aggregates, "absent_counts": report.absent_counts})


def _cmd_stats(args, cfg):
    if not cfg.dataset:
        raise ConfigError("stats needs --dataset")
    taxonomy, _ = load_run_inputs(cfg)
    _emit(compute_stats(load_dataset(cfg.dataset, cfg.format, cfg.strict, taxonomy, cfg.image_root)).to_dict())


_COMMANDS = {
    "run": _cmd_run,
    "classify": _cmd_classify,
    "context": _cmd_context,
    "filter": _cmd_filter,
    "summarize": _cmd_summarize,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        _COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, BackendUnavailable, OSError, MmqsError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
