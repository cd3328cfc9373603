"""Querying the frozen language model and canonicalizing short answers."""

import hashlib
import re
import string
from dataclasses import dataclass, field

from .exceptions import BackendError, ValidationError

_ARTICLES = {"a", "an", "the"}
_NUMBER_WORDS = {
    "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4", "five": "5",
    "six": "6", "seven": "7", "eight": "8", "nine": "9", "ten": "10",
}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation + "‘’“”´`")


def normalize_answer(text):
    """Lowercase, strip punctuation and articles, digitize zero..ten, single-space.

    >>> normalize_answer("The  TWO men")
    '2 men'
    """
    words = text.lower().translate(_PUNCT_TABLE).split()
    return " ".join(_NUMBER_WORDS.get(w, w) for w in words if w not in _ARTICLES)


@dataclass(frozen=True)
class DecodeParams:
    max_new_tokens: int = 10
    temperature: float = 0.0


@dataclass(frozen=True)
class AnswerPrediction:
    raw: str
    normalized: str
    prompt_hash: str
    backend_id: str
    decode_params: DecodeParams = field(default_factory=DecodeParams)

    @property
    def is_empty(self):
        return self.normalized == ""

    def to_dict(self):
        return {
            "raw": self.raw,
            "normalized": self.normalized,
            "prompt_hash": self.prompt_hash,
            "backend_id": self.backend_id,
            "decode_params": {
                "max_new_tokens": self.decode_params.max_new_tokens,
                "temperature": self.decode_params.temperature,
            },
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["raw"], d["normalized"], d["prompt_hash"], d["backend_id"],
                   DecodeParams(**d["decode_params"]))


def prompt_hash(prompt):
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def first_line(text):
    return re.split(r"\r?\n", text, maxsplit=1)[0].strip()


def answer(prompt, backend, decode_params=None, seed=0):
    """Greedy-decode a short answer for ``prompt``.

    Only the text before the first newline is kept, since the model tends
    to continue with another ``Question:`` stanza.
    """
    decode_params = decode_params or DecodeParams()
    if not prompt or not prompt.endswith("Answer:"):
        raise ValidationError("prompt must be non-empty and end with 'Answer:'")
    backend_id = getattr(backend, "backend_id", type(backend).__name__)
    try:
        generation = backend.complete(prompt, decode_params.max_new_tokens, seed)
    except Exception as exc:
        raise BackendError(str(exc), backend_id) from exc
    raw = first_line(generation or "")
    return AnswerPrediction(raw, normalize_answer(raw), prompt_hash(prompt), backend_id,
                            decode_params)


def answer_batch(prompts, backend, decode_params=None, seed=0):
    """Per-item semantics of :func:`answer`; uses ``backend.complete_batch`` if present."""
    decode_params = decode_params or DecodeParams()
    batch = getattr(backend, "complete_batch", None)
    if batch is None:
        return [answer(p, backend, decode_params, seed) for p in prompts]
    for p in prompts:
        if not p or not p.endswith("Answer:"):
            raise ValidationError("prompt must be non-empty and end with 'Answer:'")
    backend_id = getattr(backend, "backend_id", type(backend).__name__)
    try:
        generations = batch(list(prompts), decode_params.max_new_tokens, seed)
    except Exception as exc:
        raise BackendError(str(exc), backend_id) from exc
    out = []
    for p, g in zip(prompts, generations):
        raw = first_line(g or "")
        out.append(AnswerPrediction(raw, normalize_answer(raw), prompt_hash(p), backend_id,
                                    decode_params))
    return out
