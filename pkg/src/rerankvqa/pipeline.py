"""End-to-end orchestration: dataset loading, backend wiring, ablations and reports."""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .backends import ROLES, build_backend
from .cache import StageCache
from .answering import AnswerPrediction, normalize_answer, prompt_hash
from .evaluation import (EvalRecord, aggregate, failed_table, load_aokvqa, load_okvqa,
                         score_record, vqa_soft_accuracy)
from .exceptions import ConfigError, IngestionError
from .prompting import DEFAULT_CONTENT, DEFAULT_FORMAT, PROMPT_CONTENTS, PROMPT_FORMATS
from .vqa import CaptionRerankVQA

log = logging.getLogger(__name__)

#: prompt content ablation, one cell per content variant
CONTENT_GRID = [(DEFAULT_FORMAT, c, {}) for c in PROMPT_CONTENTS]
#: prompt format ablation, one cell per layout
FORMAT_GRID = [(f, DEFAULT_CONTENT, {}) for f in PROMPT_FORMATS]
#: sweep values for caption count and summary length charts
SWEEPS = {
    "num_captions": [5, 10, 20, 30],
    "summary_length": [60, 80, 100, 120, 140, 160],
}


@dataclass
class RunResult:
    table: object
    records: list


def load_dataset(config):
    if config.dataset == "okvqa":
        if not (config.question_file and config.annotation_file):
            raise ConfigError("okvqa needs question_file and annotation_file")
        records = load_okvqa(config.question_file, config.annotation_file)
    else:
        if not config.annotation_file:
            raise ConfigError("aokvqa needs annotation_file")
        records = load_aokvqa(config.annotation_file, config.split)
    if not records:
        raise IngestionError("dataset contains no records")
    return records[: config.max_items] if config.max_items else records


def build_backends(config):
    """Instantiate every backend named in ``config``, in role order."""
    built = {}
    for role in ROLES:
        built[role] = build_backend(role, getattr(config, role), config.image_root, built)
    return built


def build_estimator(config, backends=None, cache=None):
    """A fitted :class:`CaptionRerankVQA` for ``config``.

    ``backends`` (role -> object) overrides the backends named in the config.
    """
    backends = dict(backends) if backends else build_backends(config)
    missing = [r for r in ROLES if r not in backends]
    if missing:
        raise ConfigError(f"missing backends: {missing}")
    if cache is None:
        cache = StageCache(config.effective_cache_dir)
    est = CaptionRerankVQA(**backends, cache=cache, **config.estimator_params())
    return est.fit()


def run(config, backends=None, records=None, cache=None):
    """Answer and score every dataset item under ``config``."""
    if records is None:
        records = load_dataset(config)
    est = build_estimator(config, backends, cache)
    scored = est.predict_records(records)
    table = aggregate(scored, config.config_hash(), config.dataset, config.split,
                      params=_table_params(est))
    return RunResult(table, scored)


def _table_params(est):
    keys = ("prompt_format", "prompt_content", "num_captions", "rerank_keep",
            "summary_length", "top_k_patches")
    return {k: est.get_params()[k] for k in keys}


def _cell_estimator(estimator, fmt, content, hyperparams):
    params = estimator.get_params(deep=False)
    params.update(prompt_format=fmt, prompt_content=content, **hyperparams)
    return type(estimator)(**params).fit()


def run_ablation(grid, records, estimator, dataset="", split="", return_records=False):
    """One results table per ``(format, content, hyperparams)`` grid cell.

    Cells share the estimator's backends and cache. A failing cell yields a
    table with ``error`` set; the remaining cells still run.
    """
    if not grid:
        raise ConfigError("ablation grid is empty")
    tables, cell_records = [], []
    for fmt, content, hyperparams in grid:
        cell_id = f"{fmt}|{content}|" + ",".join(f"{k}={v}" for k, v in
                                                 sorted(hyperparams.items()))
        try:
            est = _cell_estimator(estimator, fmt, content, hyperparams)
            scored = est.predict_records(records)
            tables.append(aggregate(scored, cell_id, dataset, split, _table_params(est)))
            cell_records.append(scored)
        except Exception as exc:
            log.error("ablation cell %s failed: %s", cell_id, exc)
            tables.append(failed_table(cell_id, dataset, split, exc,
                                       {"prompt_format": fmt, "prompt_content": content,
                                        **hyperparams}))
            cell_records.append([])
    return (tables, cell_records) if return_records else tables


def run_sweep(param, values, records, estimator, dataset="", split=""):
    """Vary one parameter; returns the tables and ``(param, x, dataset, accuracy)`` rows."""
    grid = [(estimator.prompt_format, estimator.prompt_content, {param: v}) for v in values]
    tables = run_ablation(grid, records, estimator, dataset, split)
    series = [
        {"param": param, "x": v, "dataset": dataset,
         "accuracy": None if t.error else t.mean_accuracy}
        for v, t in zip(values, tables)
    ]
    return tables, series


def score_predictions(predictions, records):
    """Score externally produced answers: ``predictions`` maps question id to answer."""
    scored = []
    for rec in records:
        r = EvalRecord(rec.question_id, rec.image_ref, rec.question, list(rec.gt_answers))
        raw = predictions.get(r.question_id)
        if raw is None:
            r.flags.add("missing_prediction")
            r.score = 0.0
        else:
            norm = normalize_answer(raw)
            r.prediction = AnswerPrediction(raw, norm, prompt_hash(""), "external")
            r.score = vqa_soft_accuracy(norm, r.gt_answers)
        scored.append(r)
    return scored


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return v


def emit_report(tables, out_dir, series=None, records=None):
    """Write ``results.csv``, ``results.json`` and one ``sweep_<param>.csv`` per swept parameter."""
    tables = list(tables)
    if not tables:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    columns = ["config_id", "dataset", "split", "mean_accuracy", "display_accuracy",
               "n_items", "params", "flag_breakdown", "error"]
    path = out / "results.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for t in tables:
            d = t.to_dict()
            w.writerow({c: _csv_value(d[c]) for c in columns})
    written.append(path)

    doc = {"results": [t.to_dict() for t in tables]}
    if records is not None:
        doc["records"] = [r.to_dict() for r in records]
    path = out / "results.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False),
                    encoding="utf-8")
    written.append(path)

    by_param = {}
    for row in series or ():
        by_param.setdefault(row["param"], []).append(row)
    for param, rows in sorted(by_param.items()):
        path = out / f"sweep_{param}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=["x", "dataset", "accuracy"])
            w.writeheader()
            for row in rows:
                w.writerow({"x": row["x"], "dataset": row["dataset"],
                            "accuracy": _csv_value(row["accuracy"])})
        written.append(path)
    return written


def inspect_item(question_id, config, backends=None, records=None, cache=None):
    """Every stage artifact for one item as plain text, computing missing stages."""
    if records is None:
        records = load_dataset(config.replace(max_items=None))
    match = [r for r in records if r.question_id == str(question_id)]
    if not match:
        raise IngestionError("question id not in dataset", question_id)
    est = build_estimator(config, backends, cache)
    rec = match[0]
    trace = est.trace_item(rec)
    scored = score_record(EvalRecord(rec.question_id, rec.image_ref, rec.question,
                                     list(rec.gt_answers),
                                     AnswerPrediction.from_dict(trace.stages["answer"])))
    return format_trace(rec, trace, scored.score)


def format_trace(rec, trace, score):
    s = trace.stages
    lines = [
        f"question_id: {rec.question_id}",
        f"image: {rec.image_ref}",
        f"question: {rec.question}",
        f"ground truth: {', '.join(rec.gt_answers)}",
        "",
        "== patches ==",
        " ".join(str(i) for i in s["patches"]["indices"]) or "(whole image)",
        "",
        "== captions ==",
    ]
    lines += [f"[{i}] {c['text']}" for i, c in enumerate(s["captions"])]
    lines += ["", "== reranked =="]
    lines += [f"[{i}] {score_:.4f} {s['captions'][i]['text']}"
              for i, score_ in zip(s["rerank"]["ordered"], s["rerank"]["scores"])]
    lines += ["", "== summary ==", s["summary"]["text"], "", "== exemplar QA =="]
    lines += [f"{p['question']} -> {p['answer']}" for p in s["qa"]]
    lines += ["", "== prompt ==", s["prompt"], "", "== answer =="]
    lines += [f"raw: {s['answer']['raw']}", f"normalized: {s['answer']['normalized']}",
              f"score: {score}", f"flags: {', '.join(sorted(trace.flags)) or '-'}"]
    return "\n".join(lines)
