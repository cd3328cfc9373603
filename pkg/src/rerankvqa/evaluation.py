"""Dataset loading, soft-accuracy scoring and result aggregation."""

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .answering import AnswerPrediction, normalize_answer
from .exceptions import AggregationError, IngestionError

DATASETS = ("okvqa", "aokvqa")


@dataclass
class EvalRecord:
    question_id: str
    image_ref: str
    question: str
    gt_answers: list
    prediction: AnswerPrediction | None = None
    score: float | None = None
    flags: set = field(default_factory=set)

    def __post_init__(self):
        if not self.gt_answers:
            raise IngestionError("no ground-truth answers", self.question_id)

    @property
    def answer_counts(self):
        return Counter(self.gt_answers)

    def to_dict(self):
        return {
            "question_id": self.question_id,
            "image_ref": self.image_ref,
            "question": self.question,
            "gt_answers": list(self.gt_answers),
            "prediction": None if self.prediction is None else self.prediction.to_dict(),
            "score": self.score,
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        pred = d.get("prediction")
        return cls(
            str(d["question_id"]),
            d["image_ref"],
            d["question"],
            list(d["gt_answers"]),
            None if pred is None else AnswerPrediction.from_dict(pred),
            d.get("score"),
            set(d.get("flags", ())),
        )


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON ({exc})") from exc


def okvqa_image_ref(image_id, split="val2014"):
    return f"{split}/COCO_{split}_{int(image_id):012d}.jpg"


def load_okvqa(question_file, annotation_file, image_split="val2014"):
    """Join the OK-VQA question and annotation files on ``question_id``.

    Records follow the question file's order; ``gt_answers`` holds the raw
    annotator answers (ten per question), duplicates included.
    """
    questions = _read_json(question_file)
    annotations = _read_json(annotation_file)
    if not isinstance(questions, dict) or "questions" not in questions:
        raise IngestionError(f"{question_file}: missing 'questions' list")
    if not isinstance(annotations, dict) or "annotations" not in annotations:
        raise IngestionError(f"{annotation_file}: missing 'annotations' list")

    answers_by_qid = {}
    for ann in annotations["annotations"]:
        qid = ann.get("question_id")
        try:
            answers_by_qid[qid] = [a["answer"] for a in ann["answers"]]
        except (KeyError, TypeError) as exc:
            raise IngestionError(f"malformed answers ({exc})", qid) from exc

    records = []
    for q in questions["questions"]:
        qid = q.get("question_id")
        try:
            question, image_id = q["question"], q["image_id"]
        except KeyError as exc:
            raise IngestionError(f"missing field {exc}", qid) from exc
        if qid not in answers_by_qid:
            raise IngestionError("no annotation for question", qid)
        if not answers_by_qid[qid]:
            raise IngestionError("empty answer list", qid)
        records.append(
            EvalRecord(str(qid), okvqa_image_ref(image_id, image_split), question,
                       answers_by_qid[qid])
        )
    return records


def aokvqa_image_ref(image_id, split):
    coco_split = "val2017" if split == "val" else "train2017" if split == "train" else split
    return f"{coco_split}/{int(image_id):012d}.jpg"


def load_aokvqa(annotation_file, split="val"):
    """Load A-OKVQA records scored against their ``direct_answers`` lists.

    Records carrying a ``split`` field other than ``split`` are skipped.
    """
    data = _read_json(annotation_file)
    if not isinstance(data, list):
        raise IngestionError(f"{annotation_file}: expected a list of records")
    records = []
    for item in data:
        qid = item.get("question_id") if isinstance(item, dict) else None
        if not isinstance(item, dict):
            raise IngestionError("record is not an object", qid)
        if item.get("split", split) != split:
            continue
        try:
            question, image_id = item["question"], item["image_id"]
        except KeyError as exc:
            raise IngestionError(f"missing field {exc}", qid) from exc
        direct = item.get("direct_answers")
        if not direct or not isinstance(direct, list):
            raise IngestionError("missing direct_answers", qid)
        records.append(EvalRecord(str(qid), aokvqa_image_ref(image_id, split), question,
                                  list(direct)))
    return records


def save_records(records, path):
    Path(path).write_text(
        json.dumps([r.to_dict() for r in records], indent=1, sort_keys=True), encoding="utf-8"
    )


def load_records(path):
    return [EvalRecord.from_dict(d) for d in _read_json(path)]


def vqa_soft_accuracy(prediction, gt_answers):
    """``min(matches / 3, 1)`` where matches counts normalized ground-truth hits."""
    if not gt_answers:
        raise ValueError("gt_answers must be non-empty")
    if not prediction:
        return 0.0
    matches = sum(1 for a in gt_answers if normalize_answer(a) == prediction)
    return min(matches / 3.0, 1.0)


def score_record(record):
    pred = "" if record.prediction is None else record.prediction.normalized
    record.score = vqa_soft_accuracy(pred, record.gt_answers)
    return record


@dataclass
class ResultsTable:
    config_id: str
    dataset: str
    split: str
    mean_accuracy: float
    n_items: int
    flag_breakdown: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def display_accuracy(self):
        return round(self.mean_accuracy, 1)

    def to_dict(self):
        return {
            "config_id": self.config_id,
            "dataset": self.dataset,
            "split": self.split,
            # failed cells have no accuracy; NaN is not valid JSON
            "mean_accuracy": None if self.error else self.mean_accuracy,
            "display_accuracy": None if self.error else self.display_accuracy,
            "n_items": self.n_items,
            "flag_breakdown": self.flag_breakdown,
            "params": self.params,
            "error": self.error,
        }


def aggregate(records, config_id="", dataset="", split="", params=None):
    """Mean soft accuracy in percent, plus item count and accuracy per flag."""
    records = list(records)
    if not records:
        raise AggregationError("cannot aggregate an empty record list")
    if any(r.score is None for r in records):
        raise AggregationError("all records must be scored before aggregation")
    # fsum keeps the mean independent of record order
    mean = 100.0 * math.fsum(r.score for r in records) / len(records)
    breakdown = {}
    for flag in sorted({f for r in records for f in r.flags}):
        flagged = [r.score for r in records if flag in r.flags]
        breakdown[flag] = {
            "n_items": len(flagged),
            "mean_accuracy": 100.0 * math.fsum(flagged) / len(flagged),
        }
    return ResultsTable(config_id, dataset, split, mean, len(records), breakdown,
                        dict(params or {}))


def failed_table(config_id, dataset, split, error, params=None):
    return ResultsTable(config_id, dataset, split, float("nan"), 0, {}, dict(params or {}),
                        error=str(error))
