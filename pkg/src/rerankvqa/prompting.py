"""Prompt serialization for the frozen answering model.

A prompt is the instruction line, an optional ``Contexts:`` block and the
target question stanza, joined by single newlines::

    Please reason the answers to the questions according to the contexts.
    Contexts:
    Rerank_Caption: a man riding a wave on a surfboard
    Summary: a surfer rides a large wave in the ocean
    Question: What item is this in this picture?
    Answer: surfboard
    Question: What sport is this?
    Answer:

The order of captions, summary and exemplar QA inside the block depends on
the :class:`PromptFormat`; which of them appear depends on the
:class:`PromptContent`.
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .exceptions import CompositionError, ValidationError
from .qa import QAPair


@lru_cache(maxsize=None)
def load_prompt_assets():
    text = resources.files("rerankvqa").joinpath("assets", "prompt.json").read_text("utf-8")
    return json.loads(text)


def default_instruction():
    return load_prompt_assets()["instruction"]


@dataclass(frozen=True)
class PromptFormat:
    id: str
    order: tuple
    repetition: bool


@dataclass(frozen=True)
class PromptContent:
    id: str
    components: frozenset


PROMPT_FORMATS = {
    f.id: f
    for f in (
        PromptFormat("S+C+QA", ("S", "unit"), True),
        PromptFormat("C+QA+S", ("unit", "S"), True),
        PromptFormat("MC+MQA+S", ("C", "QA", "S"), False),
        PromptFormat("S+MC+MQA", ("S", "C", "QA"), False),
        PromptFormat("MC+S+MQA", ("C", "S", "QA"), False),
    )
}

PROMPT_CONTENTS = {
    c.id: c
    for c in (
        PromptContent("I", frozenset()),
        PromptContent("I+C", frozenset({"C"})),
        PromptContent("I+C+QAP", frozenset({"C", "QA"})),
        PromptContent("I+S+QAP", frozenset({"S", "QA"})),
        PromptContent("I+C+S+QAP", frozenset({"C", "S", "QA"})),
        PromptContent("I+RC+S+QAP", frozenset({"RC", "S", "QA"})),
    )
}

DEFAULT_FORMAT = "MC+S+MQA"
DEFAULT_CONTENT = "I+RC+S+QAP"


def get_format(fmt):
    if isinstance(fmt, PromptFormat):
        return fmt
    try:
        return PROMPT_FORMATS[fmt]
    except KeyError:
        raise ValidationError(f"unknown prompt format {fmt!r}") from None


def get_content(content):
    if isinstance(content, PromptContent):
        return content
    try:
        return PROMPT_CONTENTS[content]
    except KeyError:
        raise ValidationError(f"unknown prompt content {content!r}") from None


@dataclass(frozen=True)
class PromptBundle:
    """Everything that may enter a prompt.

    ``captions`` are the reranked captions, best first. ``raw_captions`` are
    captions in generation order, used by content variants without
    reranking.
    """

    question: str
    captions: tuple = ()
    summary: str | None = None
    qa_pairs: tuple = ()
    instruction: str = field(default_factory=default_instruction)
    raw_captions: tuple | None = None

    def __post_init__(self):
        if not isinstance(self.question, str) or not self.question.strip():
            raise ValidationError("bundle question must be non-empty")
        object.__setattr__(self, "captions", tuple(self.captions))
        object.__setattr__(self, "qa_pairs", tuple(self.qa_pairs))
        if self.raw_captions is not None:
            object.__setattr__(self, "raw_captions", tuple(self.raw_captions))


def _qa_lines(pair, labels):
    q, a = (pair.question, pair.answer) if isinstance(pair, QAPair) else pair
    return [f"{labels['question']} {q}", f"{labels['answer']} {a}"]


def _check_components(bundle, content):
    need = content.components
    if "C" in need and not bundle.raw_captions:
        raise CompositionError("raw_captions")
    if "RC" in need and not bundle.captions:
        raise CompositionError("captions")
    if "S" in need and not (bundle.summary and bundle.summary.strip()):
        raise CompositionError("summary")
    if "QA" in need and not bundle.qa_pairs:
        raise CompositionError("qa_pairs")


def context_lines(bundle, fmt=DEFAULT_FORMAT, content=DEFAULT_CONTENT):
    """Lines of the ``Contexts:`` block, without the label itself."""
    fmt, content = get_format(fmt), get_content(content)
    _check_components(bundle, content)
    labels = load_prompt_assets()["labels"]
    need = content.components

    if "RC" in need:
        caption_lines = [f"{labels['rerank_caption']} {c}" for c in bundle.captions]
    elif "C" in need:
        caption_lines = [f"{labels['caption']} {c}" for c in bundle.raw_captions]
    else:
        caption_lines = []
    summary_lines = [f"{labels['summary']} {bundle.summary}"] if "S" in need else []
    qa = list(bundle.qa_pairs) if "QA" in need else []

    blocks = {"S": summary_lines, "C": caption_lines}
    blocks["QA"] = [line for p in qa for line in _qa_lines(p, labels)]
    if fmt.repetition:
        # caption/QA units: exemplar j follows caption j mod n_captions
        if caption_lines:
            units = [[line] for line in caption_lines]
            for j, p in enumerate(qa):
                units[j % len(units)].extend(_qa_lines(p, labels))
            blocks["unit"] = [line for u in units for line in u]
        else:
            blocks["unit"] = blocks["QA"]
    return [line for part in fmt.order for line in blocks[part]]


def build_prompt(bundle, fmt=DEFAULT_FORMAT, content=DEFAULT_CONTENT):
    """Serialize ``bundle``; the result always ends with ``"Answer:"``."""
    labels = load_prompt_assets()["labels"]
    lines = [bundle.instruction]
    ctx = context_lines(bundle, fmt, content)
    if ctx:
        lines.append(labels["contexts"])
        lines.extend(ctx)
    lines.append(f"{labels['question']} {bundle.question.strip()}")
    lines.append(labels["answer"])
    return "\n".join(lines)
