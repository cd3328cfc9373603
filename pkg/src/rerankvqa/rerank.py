"""One-to-one caption reranking with a cross-encoder and top-k selection."""

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_nonempty_text
from .captioning import Caption
from .exceptions import BackendError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_RERANK_KEEP = 5


@dataclass(frozen=True)
class ScoredCaption:
    caption_index: int
    score: float
    backend_id: str = "unknown"

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValidationError(f"caption {self.caption_index} has non-finite score")


@dataclass(frozen=True)
class CaptionSelection:
    ordered: tuple
    k: int
    scores: tuple = ()
    flags: frozenset = field(default_factory=frozenset)

    def to_dict(self):
        return {
            "ordered": list(self.ordered),
            "k": self.k,
            "scores": list(self.scores),
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["ordered"]), d["k"], tuple(d["scores"]), frozenset(d["flags"]))


class RerankerBackend(Protocol):
    model_id: str

    def score(self, question_text, caption_text) -> float:
        ...


def score_pair(question, caption, backend, caption_index=0):
    """Score one (question, caption) pair independently of all others."""
    check_nonempty_text(question, "question")
    text = caption.text if isinstance(caption, Caption) else caption
    check_nonempty_text(text, "caption")
    model_id = getattr(backend, "model_id", type(backend).__name__)
    try:
        s = float(backend.score(question, text))
    except Exception as exc:
        raise BackendError(str(exc), model_id) from exc
    if not math.isfinite(s):
        raise BackendError(f"non-finite score {s}", model_id)
    return ScoredCaption(caption_index, s, model_id)


def select_top_captions(scored, k=DEFAULT_RERANK_KEEP):
    """Indices of the ``k`` best scores, best first, ties to the lower index."""
    k = check_count(k, "k")
    if not scored:
        log.warning("no captions to rerank")
        return CaptionSelection((), k, (), frozenset({"empty_input"}))
    ranked = sorted(scored, key=lambda s: (-s.score, s.caption_index))[:k]
    return CaptionSelection(
        tuple(s.caption_index for s in ranked), k, tuple(s.score for s in ranked)
    )


def rerank_captions(question, captions, backend, k=DEFAULT_RERANK_KEEP):
    scored = [score_pair(question, c, backend, i) for i, c in enumerate(captions)]
    return select_top_captions(scored, k)


class CaptionReranker(TransformerMixin, BaseEstimator):
    """Keep the ``k`` captions most relevant to each question.

    ``transform`` takes ``(question, captions)`` pairs and returns the kept
    captions for each, best first.
    """

    def __init__(self, backend=None, k=DEFAULT_RERANK_KEEP):
        self.backend = backend
        self.k = k

    def fit(self, X=None, y=None):
        if self.backend is None:
            raise ValidationError("CaptionReranker needs a backend")
        check_count(self.k, "k")
        self.is_fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self)
        out = []
        for question, captions in X:
            sel = rerank_captions(question, captions, self.backend, self.k)
            out.append([captions[i] for i in sel.ordered])
        return out
