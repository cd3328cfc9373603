"""Command line entry point: ``rerankvqa run|ablate|sweep|score-only|inspect``.

Exit codes: 0 success, 2 configuration error, 3 dataset ingestion error,
4 backend error (only raised in ``--strict`` mode).
"""

import argparse
import json
import logging
import sys

from .config import load_config
from .exceptions import BackendError, ConfigError, IngestionError
from .pipeline import (CONTENT_GRID, FORMAT_GRID, SWEEPS, build_estimator, emit_report,
                       inspect_item, load_dataset, run, run_ablation, run_sweep,
                       score_predictions)
from .evaluation import aggregate
from .prompting import PROMPT_CONTENTS, PROMPT_FORMATS

log = logging.getLogger("rerankvqa")

EXIT_CONFIG, EXIT_INGEST, EXIT_BACKEND = 2, 3, 4

_CONFIG_FLAGS = [
    ("--dataset", str, "okvqa or aokvqa"),
    ("--split", str, "dataset split (default val)"),
    ("--question-file", str, "OK-VQA questions JSON"),
    ("--annotation-file", str, "OK-VQA annotations or A-OKVQA split JSON"),
    ("--image-root", str, "directory image refs are relative to"),
    ("--captioner", str, "captioner backend, e.g. stub or blip[:checkpoint]"),
    ("--reranker", str, "reranker backend, e.g. stub or cross-encoder:BAAI/bge-reranker-large"),
    ("--summarizer", str, "summarizer backend, e.g. stub or hf-causal:google/gemma-2b"),
    ("--llm", str, "answering backend, e.g. stub or hf-causal:facebook/opt-6.7b"),
    ("--answerer", str, "QA filter backend: stub or lm"),
    ("--top-k-patches", int, "patches kept from the relevance map (default 20)"),
    ("--patch-strategy", str, "deterministic_topk or weighted_sample"),
    ("--rectify-mode", str, "positive or negative gradient rectification"),
    ("--num-captions", int, "raw captions per item (default top-k-patches + 1)"),
    ("--rerank-keep", int, "captions kept after reranking (default 5)"),
    ("--summary-length", int, "summary length (default 140 okvqa / 100 aokvqa)"),
    ("--max-qa-pairs", int, "exemplar QA cap before filtering (default 30)"),
    ("--prompt-format", str, "one of " + ", ".join(PROMPT_FORMATS)),
    ("--prompt-content", str, "one of " + ", ".join(PROMPT_CONTENTS)),
    ("--instruction", str, "override the prompt instruction line"),
    ("--max-new-tokens", int, "answer generation budget (default 10)"),
    ("--seed", int, "random seed (default 0)"),
    ("--cache-dir", str, "stage cache directory (env RERANKVQA_CACHE_DIR)"),
    ("--max-items", int, "only the first N dataset items"),
    ("--workers", int, "item-level worker threads"),
]


def _add_common(p):
    p.add_argument("--config", help="INI config file with a [pipeline] section")
    for flag, typ, help_ in _CONFIG_FLAGS:
        p.add_argument(flag, type=typ, default=None, help=help_)
    p.add_argument("--strict", action="store_true", default=None,
                   help="abort on the first item failure")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="rerankvqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="answer and score a dataset")
    _add_common(p)
    p.add_argument("--out", default="results", help="report directory")

    p = sub.add_parser("ablate", help="prompt content / format ablations")
    _add_common(p)
    p.add_argument("--grid", choices=["content", "format", "both"], default="content")
    p.add_argument("--out", default="results")

    p = sub.add_parser("sweep", help="vary one hyperparameter")
    _add_common(p)
    p.add_argument("--param", required=True,
                   choices=["num_captions", "summary_length", "rerank_keep", "top_k_patches"])
    p.add_argument("--values", help="comma-separated values (defaults per parameter)")
    p.add_argument("--out", default="results")

    p = sub.add_parser("score-only", help="score a predictions file")
    _add_common(p)
    p.add_argument("--predictions", required=True,
                   help="JSON: {question_id: answer} or [{question_id, answer}]")
    p.add_argument("--out", default="results")

    p = sub.add_parser("inspect", help="dump every stage artifact for one item")
    _add_common(p)
    p.add_argument("question_id")
    return parser


def _config_from_args(args):
    overrides = {flag.lstrip("-").replace("-", "_"): getattr(args, flag.lstrip("-").replace("-", "_"))
                 for flag, _, _ in _CONFIG_FLAGS}
    overrides["strict"] = args.strict
    return load_config(args.config, **overrides)


def _read_predictions(path):
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict):
        return {str(k): v for k, v in data.items()}
    return {str(d["question_id"]): d["answer"] for d in data}


def _print_tables(tables):
    for t in tables:
        acc = "FAILED" if t.error else f"{t.display_accuracy:5.1f}"
        print(f"{acc}  n={t.n_items:<5d} {t.config_id}")


def _dispatch(args):
    config = _config_from_args(args)

    if args.command == "inspect":
        print(inspect_item(args.question_id, config))
        return 0

    records = load_dataset(config)
    if args.command == "run":
        result = run(config, records=records)
        tables, series, recs = [result.table], None, result.records
    elif args.command == "score-only":
        recs = score_predictions(_read_predictions(args.predictions), records)
        tables, series = [aggregate(recs, config.config_hash(), config.dataset,
                                    config.split)], None
    elif args.command == "ablate":
        grid = {"content": CONTENT_GRID, "format": FORMAT_GRID,
                "both": CONTENT_GRID + FORMAT_GRID}[args.grid]
        est = build_estimator(config)
        tables = run_ablation(grid, records, est, config.dataset, config.split)
        series, recs = None, None
    else:
        values = ([int(v) for v in args.values.split(",")] if args.values
                  else SWEEPS.get(args.param))
        if not values:
            raise ConfigError(f"--values required for {args.param}")
        est = build_estimator(config)
        tables, series = run_sweep(args.param, values, records, est, config.dataset,
                                   config.split)
        recs = None

    for path in emit_report(tables, args.out, series, recs):
        log.info("wrote %s", path)
    _print_tables(tables)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, FileNotFoundError) as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
