"""The end-to-end answering model as a scikit-learn style estimator.

:class:`CaptionRerankVQA` holds the frozen backends and every pipeline knob
as constructor parameters, so ``get_params``/``set_params`` drive ablations
and sweeps. ``fit`` learns nothing; it validates the configuration and
derives the per-stage cache keys.

Stage outputs are cached under a hash of only the parameters that stage
depends on (see :data:`STAGE_DEPENDENCIES`), so changing e.g. the prompt
format reuses every caption, rerank and summary result.
"""

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count
from .answering import AnswerPrediction, DecodeParams, answer
from .cache import StageCache
from .captioning import Caption, dedup_captions, generate_captions
from .evaluation import EvalRecord, score_record, vqa_soft_accuracy
from .exceptions import ConfigError, EmptyCaptionError, ValidationError
from .prompting import (DEFAULT_CONTENT, DEFAULT_FORMAT, PromptBundle, build_prompt,
                        default_instruction, get_content, get_format)
from .qa import MAX_QA_PAIRS, QAPair, RuleBasedParser, candidate_pairs, synthesize_qa_pairs
from .relevance import (DEFAULT_TOP_K_PATCHES, RECTIFY_MODES, STRATEGIES, PatchSelection,
                        RelevanceMap, patch_relevance, sample_patches)
from .rerank import DEFAULT_RERANK_KEEP, CaptionSelection, rerank_captions
from .summarize import MIN_TARGET_LENGTH, summarize

log = logging.getLogger(__name__)

STAGES = ("relevance", "patches", "captions", "rerank", "summary", "qa", "prompt", "answer")

_OWN_PARAMS = {
    "relevance": ("captioner", "rectify_mode"),
    "patches": ("top_k_patches", "patch_strategy", "seed"),
    "captions": ("num_captions",),
    "rerank": ("reranker", "rerank_keep"),
    "summary": ("summarizer", "summary_length"),
    "qa": ("answerer", "parser", "max_qa_pairs"),
    "prompt": ("prompt_format", "prompt_content", "instruction"),
    "answer": ("llm", "max_new_tokens"),
}
_UPSTREAM = {
    "relevance": (),
    "patches": ("relevance",),
    "captions": ("patches",),
    "rerank": ("captions",),
    "summary": ("rerank",),
    "qa": ("rerank",),
    "prompt": ("summary", "qa"),
    "answer": ("prompt",),
}


def _closure(stage):
    params = set(_OWN_PARAMS[stage])
    for up in _UPSTREAM[stage]:
        params |= _closure(up)
    return params


#: stage -> every parameter whose change invalidates that stage's cache
STAGE_DEPENDENCIES = {s: frozenset(_closure(s)) for s in STAGES}


def backend_identity(obj):
    if obj is None:
        return None
    for attr in ("backend_id", "model_id"):
        if isinstance(getattr(obj, attr, None), str):
            return getattr(obj, attr)
    return type(obj).__name__


def _concurrency(obj):
    caps = getattr(obj, "capabilities", None)
    n = getattr(caps, "max_concurrency", None) or getattr(obj, "max_concurrency", None)
    return max(1, int(n or 1))


@dataclass
class ItemTrace:
    """Every stage artifact for one item, as stored in the cache."""

    question_id: str
    stages: dict = field(default_factory=dict)
    flags: set = field(default_factory=set)
    error: str | None = None

    def to_dict(self):
        return {
            "question_id": self.question_id,
            "stages": self.stages,
            "flags": sorted(self.flags),
            "error": self.error,
        }


def _as_record(item):
    if isinstance(item, EvalRecord):
        return item
    if isinstance(item, dict):
        return EvalRecord(
            str(item["question_id"]), item["image_ref"], item["question"],
            list(item.get("gt_answers") or ["?"]),
        )
    raise ValidationError(f"cannot interpret item {item!r}")


class CaptionRerankVQA(BaseEstimator):
    """Zero-shot VQA over frozen captioner, reranker, summarizer and LLM backends.

    Parameters
    ----------
    captioner, reranker, summarizer, llm, answerer : backend objects
        ``answerer`` validates synthesized QA pairs against their caption.
    top_k_patches : int
        Patches kept from the relevance map.
    num_captions : int or None
        Raw captions generated per item; ``None`` means one per patch plus
        one whole-image caption.
    rerank_keep : int
        Captions kept after reranking.
    summary_length : int
        Target summary length in reference tokens.
    prompt_format, prompt_content : str
        Prompt layout and ablation content identifiers.
    cache : StageCache or None
        Shared stage cache; ``None`` gives each fit a private in-memory cache.
    strict : bool
        Re-raise item failures instead of recording them.
    """

    def __init__(self, captioner=None, reranker=None, summarizer=None, llm=None,
                 answerer=None, parser=None, top_k_patches=DEFAULT_TOP_K_PATCHES,
                 patch_strategy="deterministic_topk", rectify_mode="positive",
                 num_captions=None, rerank_keep=DEFAULT_RERANK_KEEP, summary_length=100,
                 max_qa_pairs=MAX_QA_PAIRS, prompt_format=DEFAULT_FORMAT,
                 prompt_content=DEFAULT_CONTENT, instruction=None, max_new_tokens=10,
                 seed=0, cache=None, n_jobs=1, strict=False):
        self.captioner = captioner
        self.reranker = reranker
        self.summarizer = summarizer
        self.llm = llm
        self.answerer = answerer
        self.parser = parser
        self.top_k_patches = top_k_patches
        self.patch_strategy = patch_strategy
        self.rectify_mode = rectify_mode
        self.num_captions = num_captions
        self.rerank_keep = rerank_keep
        self.summary_length = summary_length
        self.max_qa_pairs = max_qa_pairs
        self.prompt_format = prompt_format
        self.prompt_content = prompt_content
        self.instruction = instruction
        self.max_new_tokens = max_new_tokens
        self.seed = seed
        self.cache = cache
        self.n_jobs = n_jobs
        self.strict = strict

    # -- configuration -------------------------------------------------

    def _validate_params(self):
        try:
            self._check_params()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    def _check_params(self):
        for role in ("captioner", "reranker", "summarizer", "llm", "answerer"):
            if getattr(self, role) is None:
                raise ConfigError(f"missing {role} backend")
        check_count(self.top_k_patches, "top_k_patches")
        if self.num_captions is not None:
            check_count(self.num_captions, "num_captions")
        check_count(self.rerank_keep, "rerank_keep")
        check_count(self.summary_length, "summary_length", MIN_TARGET_LENGTH)
        check_count(self.max_qa_pairs, "max_qa_pairs")
        check_count(self.max_new_tokens, "max_new_tokens")
        check_count(self.n_jobs, "n_jobs")
        if self.patch_strategy not in STRATEGIES:
            raise ConfigError(f"unknown patch_strategy {self.patch_strategy!r}")
        if self.rectify_mode not in RECTIFY_MODES:
            raise ConfigError(f"unknown rectify_mode {self.rectify_mode!r}")
        get_format(self.prompt_format)
        get_content(self.prompt_content)

    def _hashable_params(self):
        params = self.get_params(deep=False)
        for role in ("captioner", "reranker", "summarizer", "llm", "answerer", "parser"):
            params[role] = backend_identity(params[role])
        params["num_captions"] = self.num_captions_
        params["instruction"] = self.instruction_
        return params

    def fit(self, X=None, y=None):
        """Validate parameters and derive stage cache keys; nothing is learned."""
        self._validate_params()
        self.num_captions_ = self.num_captions or self.top_k_patches + 1
        self.instruction_ = self.instruction or default_instruction()
        self.parser_ = self.parser or RuleBasedParser()
        self.cache_ = self.cache if self.cache is not None else StageCache()
        params = self._hashable_params()
        self.stage_hashes_ = {}
        for stage in STAGES:
            sub = {k: params[k] for k in sorted(STAGE_DEPENDENCIES[stage])}
            blob = json.dumps(sub, sort_keys=True, default=str).encode("utf-8")
            self.stage_hashes_[stage] = hashlib.sha256(blob).hexdigest()[:16]
        self._limits = {}
        self._limits_guard = threading.Lock()
        return self

    # -- stage machinery -----------------------------------------------

    def _limit(self, backend):
        with self._limits_guard:
            key = id(backend)
            if key not in self._limits:
                self._limits[key] = threading.BoundedSemaphore(_concurrency(backend))
            return self._limits[key]

    def _stage(self, trace, stage, compute, backend=None):
        """Return the cached payload for ``stage`` or compute and store it."""
        key = self.stage_hashes_[stage]
        payload = self.cache_.get(trace.question_id, stage, key)
        if payload is None:
            flags = set()
            try:
                if backend is None:
                    result = compute(flags)
                else:
                    with self._limit(backend):
                        result = compute(flags)
            except Exception as exc:
                if not hasattr(exc, "stage"):
                    exc.stage = stage
                raise
            payload = self.cache_.put(
                trace.question_id, stage, key, {"result": result, "flags": sorted(flags)}
            )
        trace.stages[stage] = payload["result"]
        trace.flags.update(payload["flags"])
        return payload["result"]

    def _relevance(self, rec, flags):
        caps = getattr(self.captioner, "capabilities", None)
        if not getattr(caps, "supports_attention_export", False):
            flags.add("no_attention")
            return None
        attn = self.captioner.export_attention(rec.image_ref, rec.question)
        meta = {"image_ref": rec.image_ref, "question_id": rec.question_id}
        return patch_relevance(attn, self.rectify_mode, meta).to_dict()

    def _patches(self, relevance, flags):
        if relevance is None:
            return PatchSelection.whole_image().to_dict()
        sel = sample_patches(RelevanceMap.from_dict(relevance), self.top_k_patches,
                             self.patch_strategy, self.seed)
        if sel.meta.get("uniform_fallback"):
            flags.add("uniform_patch_fallback")
        return sel.to_dict()

    def _captions(self, rec, selection, flags):
        sel = PatchSelection.from_dict(selection)
        try:
            caps = generate_captions(rec.image_ref, sel, self.num_captions_, self.captioner,
                                     self.seed)
        except EmptyCaptionError:
            flags.add("whole_image_fallback")
            caps = generate_captions(rec.image_ref, PatchSelection.whole_image(),
                                     self.num_captions_, self.captioner, self.seed)
        return [c.to_dict() for c in dedup_captions(caps)]

    def _rerank(self, rec, captions, flags):
        caps = [Caption.from_dict(c) for c in captions]
        sel = rerank_captions(rec.question, caps, self.reranker, self.rerank_keep)
        flags.update(sel.flags)
        return sel.to_dict()

    def _summary(self, kept, flags):
        s = summarize(kept, self.summary_length, self.summarizer, self.seed)
        if s.degraded:
            flags.add("summary_degraded")
        return s.to_dict()

    def _qa(self, kept, flags):
        pairs = synthesize_qa_pairs(kept, self.answerer, self.parser_,
                                    max_pairs=self.max_qa_pairs, flags=flags)
        if not pairs:
            # nothing survived filtering; exemplars are still better than none
            pairs = candidate_pairs(kept, self.parser_, max_pairs=self.max_qa_pairs)
            if pairs:
                flags.add("qa_unfiltered_fallback")
        return [p.to_dict() for p in pairs]

    def _prompt(self, rec, captions, kept, summary, qa, flags):
        bundle = PromptBundle(
            question=rec.question,
            captions=tuple(c.text for c in kept),
            summary=summary["text"],
            qa_pairs=tuple(QAPair.from_dict(p) for p in qa),
            instruction=self.instruction_,
            raw_captions=tuple(c["text"] for c in captions[: self.rerank_keep]),
        )
        return build_prompt(bundle, self.prompt_format, self.prompt_content)

    def _answer(self, prompt, flags):
        pred = answer(prompt, self.llm, DecodeParams(self.max_new_tokens), self.seed)
        if pred.is_empty:
            flags.add("empty_answer")
        return pred.to_dict()

    def trace_item(self, item):
        """Run every stage for one item and return an :class:`ItemTrace`.

        Exceptions propagate; see :meth:`predict_records` for failure handling.
        """
        check_is_fitted(self)
        rec = _as_record(item)
        t = ItemTrace(rec.question_id)
        rel = self._stage(t, "relevance", lambda f: self._relevance(rec, f), self.captioner)
        sel = self._stage(t, "patches", lambda f: self._patches(rel, f))
        caps = self._stage(t, "captions", lambda f: self._captions(rec, sel, f), self.captioner)
        rr = self._stage(t, "rerank", lambda f: self._rerank(rec, caps, f), self.reranker)
        kept = [Caption.from_dict(caps[i]) for i in CaptionSelection.from_dict(rr).ordered]
        summ = self._stage(t, "summary", lambda f: self._summary(kept, f), self.summarizer)
        qa = self._stage(t, "qa", lambda f: self._qa(kept, f), self.answerer)
        prompt = self._stage(t, "prompt",
                             lambda f: self._prompt(rec, caps, kept, summ, qa, f))
        self._stage(t, "answer", lambda f: self._answer(prompt, f), self.llm)
        return t

    # -- estimator API ---------------------------------------------------

    def _predict_one(self, rec):
        out = EvalRecord(rec.question_id, rec.image_ref, rec.question, list(rec.gt_answers))
        try:
            trace = self.trace_item(rec)
        except Exception as exc:
            if self.strict:
                raise
            stage = getattr(exc, "stage", "unknown")
            log.warning("item %s failed in stage %s: %s", rec.question_id, stage, exc)
            out.flags = {"failed", f"failed:{stage}"}
            out.score = 0.0
            return out
        out.prediction = AnswerPrediction.from_dict(trace.stages["answer"])
        out.flags = set(trace.flags)
        return score_record(out)

    def predict_records(self, X):
        """Answer and score every item; failed items get score 0 and a ``failed`` flag."""
        check_is_fitted(self)
        records = [_as_record(x) for x in X]
        if self.n_jobs == 1:
            return [self._predict_one(r) for r in records]
        with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
            return list(pool.map(self._predict_one, records))

    def predict(self, X):
        """Normalized answer strings, ``""`` for failed items."""
        return [r.prediction.normalized if r.prediction else "" for r in self.predict_records(X)]

    def score(self, X, y=None):
        """Mean soft accuracy in [0, 1].

        ``y`` holds one ground-truth answer list per item; when omitted the
        items' own ``gt_answers`` are used.
        """
        if y is None:
            records = self.predict_records(X)
            return float(np.mean([r.score for r in records]))
        preds = self.predict(X)
        return float(np.mean([vqa_soft_accuracy(p, gt) for p, gt in zip(preds, y)]))
