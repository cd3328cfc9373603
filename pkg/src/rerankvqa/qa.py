"""Exemplar question/answer pairs synthesized from captions.

Three steps: pick candidate answer words by part of speech, expand the
question templates registered for that part of speech, and keep only pairs
that an answerer reproduces from the caption alone.
"""

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Protocol

from .captioning import Caption
from .exceptions import BackendError, ValidationError

log = logging.getLogger(__name__)

POS_CLASSES = ("noun", "verb", "adjective")
ADJ_PLACEHOLDER = "ADJ TYPE"
DEFAULT_ADJ_TYPE = "attribute"
MAX_QA_PAIRS = 30


@dataclass(frozen=True)
class Template:
    template_id: str
    pos: str
    text: str


@dataclass(frozen=True)
class AnswerCandidate:
    span: str
    pos: str
    source_caption_index: int = 0
    adj_type: str | None = None

    def __post_init__(self):
        if not self.span:
            raise ValidationError("candidate span must be non-empty")
        if self.pos not in POS_CLASSES:
            raise ValidationError(f"unknown part of speech {self.pos!r}")
        if self.adj_type is not None and self.pos != "adjective":
            raise ValidationError("adj_type is only meaningful for adjectives")


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    template_id: str
    source_caption_index: int = 0
    passed_filter: bool = False

    def __post_init__(self):
        if not self.question.endswith("?"):
            raise ValidationError(f"question must end with '?': {self.question!r}")
        if not self.answer:
            raise ValidationError("answer must be non-empty")

    def to_dict(self):
        return {
            "question": self.question,
            "answer": self.answer,
            "template_id": self.template_id,
            "source_caption_index": self.source_caption_index,
            "passed_filter": self.passed_filter,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _asset_text(name):
    return resources.files("rerankvqa").joinpath("assets", name).read_text(encoding="utf-8")


def parse_template_registry(text):
    """Parse the tab-separated ``id  pos  question`` registry format."""
    templates = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] not in POS_CLASSES:
            raise ValidationError(f"malformed template line {lineno}: {line!r}")
        templates.append(Template(*parts))
    ids = [t.template_id for t in templates]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate template ids in registry")
    return tuple(templates)


@lru_cache(maxsize=None)
def default_templates():
    return parse_template_registry(_asset_text("templates.txt"))


def load_templates(path=None):
    if path is None:
        return default_templates()
    return parse_template_registry(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_adj_types():
    return json.loads(_asset_text("adj_types.json"))


def load_adj_types(path=None):
    if path is None:
        return default_adj_types()
    return json.loads(Path(path).read_text(encoding="utf-8"))


class ParserBackend(Protocol):
    def tag(self, text) -> list:
        """Return ``(word, pos)`` pairs with pos in noun/verb/adjective, others omitted."""


_STOPWORDS = frozenset(
    """a an the this that these those some any each every his her its their our my your
    of in on at to from with by for near next into onto over under above below behind
    beside between through across around along up down out off and or but while as
    is are was were be been being has have had do does did there here it they he she
    we you i who which what where when why how one two three four five six several
    many few very much more most other another top front back side""".split()
)
_WORD_RE = re.compile(r"[A-Za-z][A-Za-z'-]*")


class RuleBasedParser:
    """Closed word lists plus two suffix rules.

    Lexicon words get their listed tag; unknown words ending in ``-ing`` are
    verbs; any other unknown non-stopword is a noun.
    """

    backend_id = "rule-based"

    def __init__(self, lexicon=None):
        if lexicon is None:
            lexicon = json.loads(_asset_text("lexicon.json"))
        self._tags = {}
        for pos in POS_CLASSES:
            for w in lexicon.get(pos, ()):
                self._tags.setdefault(w.lower(), pos)

    def tag(self, text):
        out = []
        for m in _WORD_RE.finditer(text):
            word = m.group()
            low = word.lower()
            if low in self._tags:
                out.append((word, self._tags[low]))
            elif low in _STOPWORDS:
                continue
            elif low.endswith("ing") and len(low) > 4:
                out.append((word, "verb"))
            else:
                out.append((word, "noun"))
        return out


def extract_answer_candidates(caption, parser=None, adj_types=None, source_caption_index=0):
    """Noun, verb and adjective spans of ``caption`` grouped in that order.

    Within a group candidates keep their position in the caption; repeats
    of the same (span, pos) are dropped.
    """
    text = caption.text if isinstance(caption, Caption) else caption
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("caption text must be non-empty")
    parser = parser or RuleBasedParser()
    adj_types = default_adj_types() if adj_types is None else adj_types
    try:
        tagged = parser.tag(text)
    except Exception as exc:
        raise BackendError(str(exc), getattr(parser, "backend_id", "parser")) from exc

    seen = set()
    by_pos = {pos: [] for pos in POS_CLASSES}
    for word, pos in tagged:
        if pos not in by_pos or (word.lower(), pos) in seen:
            continue
        seen.add((word.lower(), pos))
        adj = adj_types.get(word.lower(), DEFAULT_ADJ_TYPE) if pos == "adjective" else None
        by_pos[pos].append(AnswerCandidate(word, pos, source_caption_index, adj))
    return [c for pos in POS_CLASSES for c in by_pos[pos]]


def instantiate_questions(candidate, templates=None):
    templates = default_templates() if templates is None else templates
    adj_type = candidate.adj_type or DEFAULT_ADJ_TYPE
    return [
        QAPair(
            t.text.replace(ADJ_PLACEHOLDER, adj_type),
            candidate.span,
            t.template_id,
            candidate.source_caption_index,
        )
        for t in templates
        if t.pos == candidate.pos
    ]


class Answerer(Protocol):
    def answer_question(self, question, context) -> str:
        ...


def filter_qa_pairs(pairs, caption, answerer, flags=None):
    """Keep pairs whose answer the answerer reproduces from ``caption`` alone.

    Answers are compared after :func:`rerankvqa.answering.normalize_answer`.
    If the answerer raises, every pair is returned unfiltered and
    ``"qa_filter_degraded"`` is added to ``flags``.
    """
    from .answering import normalize_answer

    context = caption.text if isinstance(caption, Caption) else caption
    kept = []
    try:
        for p in pairs:
            predicted = answerer.answer_question(p.question, context)
            if normalize_answer(predicted) == normalize_answer(p.answer):
                kept.append(QAPair(p.question, p.answer, p.template_id,
                                   p.source_caption_index, True))
    except Exception as exc:
        log.warning("QA filter backend failed, passing pairs through: %s", exc)
        if flags is not None:
            flags.add("qa_filter_degraded")
        return list(pairs)
    return kept


def candidate_pairs(captions, parser=None, templates=None, adj_types=None,
                    max_pairs=MAX_QA_PAIRS):
    """Unfiltered pairs for ``captions`` in the order given, at most ``max_pairs``."""
    parser = parser or RuleBasedParser()
    raw = []
    for idx, cap in enumerate(captions):
        for cand in extract_answer_candidates(cap, parser, adj_types, idx):
            raw.extend(instantiate_questions(cand, templates))
    return raw[:max_pairs]


def synthesize_qa_pairs(captions, answerer, parser=None, templates=None, adj_types=None,
                        max_pairs=MAX_QA_PAIRS, flags=None):
    """Candidates, templates and filtering over captions in the order given.

    Unfiltered pairs are capped at ``max_pairs`` before filtering, taking
    earlier captions first.
    """
    raw = candidate_pairs(captions, parser, templates, adj_types, max_pairs)
    kept = []
    for idx, cap in enumerate(captions):
        group = [p for p in raw if p.source_caption_index == idx]
        if group:
            kept.extend(filter_qa_pairs(group, cap, answerer, flags))
    return kept


class LMAnswerer:
    """Answer filter questions with a completion backend."""

    def __init__(self, generator, max_new_tokens=10, seed=0, template=None):
        self.generator = generator
        self.max_new_tokens = max_new_tokens
        self.seed = seed
        self.template = template

    @property
    def backend_id(self):
        return getattr(self.generator, "backend_id", type(self.generator).__name__)

    def answer_question(self, question, context):
        from .answering import DecodeParams, answer
        from .prompting import load_prompt_assets

        template = self.template or load_prompt_assets()["qa_filter"]
        prompt = template.format(context=context, question=question)
        pred = answer(prompt, self.generator, DecodeParams(self.max_new_tokens), self.seed)
        return pred.raw
