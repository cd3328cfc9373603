"""Length-controlled caption summaries from a frozen completion backend."""

import logging
import re
from dataclasses import dataclass
from typing import Protocol

from ._validation import check_count
from .captioning import Caption
from .exceptions import ValidationError

log = logging.getLogger(__name__)

LENGTH_SLACK = 8
MIN_TARGET_LENGTH = 16
DEFAULT_SUMMARY_LENGTH = {"okvqa": 140, "aokvqa": 100}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_END = {".", "!", "?"}


class TextGenerator(Protocol):
    backend_id: str

    def complete(self, prompt_text, max_tokens, seed) -> str:
        ...


def tokenize(text):
    """Reference tokenizer: runs of word characters and single punctuation marks."""
    return _TOKEN_RE.findall(text)


def count_tokens(text):
    return len(tokenize(text))


def truncate_tokens(text, max_tokens):
    """Cut ``text`` to at most ``max_tokens`` tokens.

    When the kept window holds a sentence end (``.``, ``!``, ``?``) the cut
    is made right after the last one; otherwise right after token
    ``max_tokens``.
    """
    matches = list(_TOKEN_RE.finditer(text))
    if len(matches) <= max_tokens:
        return text.strip()
    window = matches[:max_tokens]
    cut = window[-1].end()
    for m in reversed(window):
        if m.group() in _SENTENCE_END:
            cut = m.end()
            break
    return text[:cut].strip()


@dataclass(frozen=True)
class Summary:
    text: str
    target_length: int
    backend_id: str = "unknown"
    source_caption_indices: tuple = ()
    degraded: bool = False

    def to_dict(self):
        return {
            "text": self.text,
            "target_length": self.target_length,
            "backend_id": self.backend_id,
            "source_caption_indices": list(self.source_caption_indices),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], d["target_length"], d["backend_id"],
                   tuple(d["source_caption_indices"]), d["degraded"])


def join_captions(texts):
    return ". ".join(t.strip().rstrip(".") for t in texts)


def summary_prompt(texts, target_length, template=None):
    if template is None:
        from .prompting import load_prompt_assets

        template = load_prompt_assets()["summarize"]
    return template.format(length=target_length, captions=join_captions(texts))


def summarize(captions, target_length, backend, seed=0, template=None, source_indices=None):
    """Summarize ``captions`` (reranked, best first) to about ``target_length`` tokens.

    The generation is capped at ``target_length + 8`` reference tokens. If
    the backend raises or returns nothing, the first two captions joined by
    ``". "`` are used instead and the summary is marked degraded.
    """
    if not captions:
        raise ValidationError("summarize needs at least one caption")
    target_length = check_count(target_length, "target_length", MIN_TARGET_LENGTH)
    texts = [c.text if isinstance(c, Caption) else c for c in captions]
    indices = tuple(range(len(texts))) if source_indices is None else tuple(source_indices)
    backend_id = getattr(backend, "backend_id", type(backend).__name__)
    cap = target_length + LENGTH_SLACK

    try:
        raw = backend.complete(summary_prompt(texts, target_length, template), cap, seed)
        text = truncate_tokens(raw or "", cap)
        if not text:
            raise ValueError("empty summary")
        return Summary(text, target_length, backend_id, indices)
    except Exception as exc:
        log.warning("summarizer %s failed, using top captions: %s", backend_id, exc)
        text = ". ".join(texts[:2])
        if count_tokens(text) > cap:
            text = truncate_tokens(text, cap)
        return Summary(text, target_length, backend_id, indices[:2], degraded=True)
