"""Deterministic stand-ins for every model backend.

Outputs are pure functions of the inputs (hashed), so pipelines built on
these stubs are reproducible byte for byte. Each stub counts its calls in
``calls`` so tests can check how often a model would have been hit.
"""

import hashlib
import json
import re
import threading

import numpy as np

from ..captioning import CaptionerCapabilities
from ..exceptions import BackendError
from ..relevance import AttentionTensor


def stable_hash(*parts):
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


class _Counted:
    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def _tick(self):
        with self._lock:
            self.calls += 1

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


_SCENES = [
    (["man", "surfboard", "wave", "ocean"], ["riding", "standing", "holding"]),
    (["dog", "frisbee", "grass", "park"], ["running", "playing", "catching"]),
    (["woman", "kitchen", "pizza", "table"], ["cooking", "eating", "holding"]),
    (["bus", "street", "city", "building"], ["parked", "driving", "waiting"]),
    (["cat", "bed", "window", "blanket"], ["sleeping", "lying", "sitting"]),
    (["giraffe", "tree", "field", "zebra"], ["eating", "standing", "walking"]),
]
_ADJS = ["red", "white", "large", "small", "wooden", "green", "old", "blue"]


class StubCaptioner(_Counted):
    """Scene-keyed template captions and seeded random attention maps.

    ``fail_on`` lists image refs for which :meth:`generate` raises; ``"*"``
    matches every image.
    """

    backend_id = "stub-captioner"

    def __init__(self, grid_size=24, n_heads=2, fail_on=(), max_concurrency=4):
        super().__init__()
        self.grid_size = grid_size
        self.n_heads = n_heads
        self.fail_on = frozenset(fail_on)
        self.capabilities = CaptionerCapabilities(
            max_captions_per_call=8,
            supports_patch_masking=True,
            supports_attention_export=True,
            max_concurrency=max_concurrency,
        )

    @property
    def n_patches(self):
        return self.grid_size * self.grid_size

    def generate(self, image_ref, patch_indices, n, seed):
        self._tick()
        if image_ref in self.fail_on or "*" in self.fail_on:
            raise BackendError(f"scripted failure for {image_ref}", self.backend_id)
        nouns, verbs = _SCENES[stable_hash(image_ref) % len(_SCENES)]
        out = []
        for j in range(n):
            # few distinct outputs per scene so dedup has work to do
            h = stable_hash(image_ref, list(patch_indices)[:1], seed % 7, j)
            subj, obj = nouns[h % 2], nouns[2 + (h >> 3) % 2]
            verb = verbs[(h >> 5) % len(verbs)]
            adj = _ADJS[(h >> 7) % len(_ADJS)]
            out.append(f"a {adj} {subj} {verb} near the {obj}")
        return out

    def export_attention(self, image_ref, question_text):
        self._tick()
        rng = np.random.default_rng(stable_hash(image_ref, question_text))
        n_tokens = max(1, len(question_text.split()))
        logits = rng.normal(size=(self.n_heads, n_tokens, self.n_patches))
        values = np.exp(logits - logits.max(axis=-1, keepdims=True))
        values /= values.sum(axis=-1, keepdims=True)
        grads = rng.normal(size=values.shape)
        return AttentionTensor(values, grads)


class ScriptedCaptioner(_Counted):
    """Returns ``outputs`` in order, one per requested caption, wrapping around."""

    backend_id = "scripted-captioner"

    def __init__(self, outputs):
        super().__init__()
        self.outputs = list(outputs)
        self._next = 0
        self.capabilities = CaptionerCapabilities(supports_attention_export=False)

    def generate(self, image_ref, patch_indices, n, seed):
        self._tick()
        out = []
        for _ in range(n):
            out.append(self.outputs[self._next % len(self.outputs)])
            self._next += 1
        return out

    def export_attention(self, image_ref, question_text):
        raise NotImplementedError("scripted captioner exports no attention")


_WORDS = re.compile(r"[a-z]+")


class StubReranker(_Counted):
    """Word-overlap score between question and caption plus a tiny hash jitter."""

    model_id = "stub-reranker"

    def score(self, question_text, caption_text):
        self._tick()
        q = set(_WORDS.findall(question_text.lower()))
        c = set(_WORDS.findall(caption_text.lower()))
        overlap = len(q & c) / max(1, len(q | c))
        return overlap + (stable_hash(question_text, caption_text) % 1000) / 1e6


class TableReranker(_Counted):
    """Looks scores up in ``table`` keyed by caption text."""

    model_id = "table-reranker"

    def __init__(self, table, default=0.0):
        super().__init__()
        self.table = dict(table)
        self.default = default

    def score(self, question_text, caption_text):
        self._tick()
        return self.table.get(caption_text, self.default)


_CONTEXT_LINE = re.compile(r"^(?:Rerank_Caption|Caption|Summary|Context):\s*(.*)$", re.M)
_SKIP = {"a", "an", "the", "near", "of", "on", "in", "and", "with", "to", "at"}


class StubLanguageModel(_Counted):
    """Echoes caption lists for summary prompts; answers with a context word otherwise.

    The answer word is chosen by hashing the full prompt and seed, so any
    change to the prompt may change the answer.
    """

    backend_id = "stub-lm"

    def __init__(self, max_concurrency=4):
        super().__init__()
        self.max_concurrency = max_concurrency

    def complete(self, prompt_text, max_tokens, seed):
        self._tick()
        if prompt_text.startswith("Summarize"):
            body = prompt_text.split(": ", 1)[1] if ": " in prompt_text else prompt_text
            return " ".join(body.split()[: max(1, max_tokens)])
        words = [
            w
            for line in _CONTEXT_LINE.findall(prompt_text)
            for w in _WORDS.findall(line.lower())
            if w not in _SKIP
        ]
        if not words:
            return "yes\nQuestion:"
        return f"{words[stable_hash(prompt_text, seed) % len(words)]}\nQuestion:"


class ScriptedLanguageModel(_Counted):
    """Replies from a list (in call order) or a callable of the prompt."""

    backend_id = "scripted-lm"

    def __init__(self, responses):
        super().__init__()
        self.responses = responses
        self._next = 0

    def complete(self, prompt_text, max_tokens, seed):
        self._tick()
        if callable(self.responses):
            return self.responses(prompt_text)
        out = self.responses[self._next % len(self.responses)]
        self._next += 1
        return out


class StubAnswerer(_Counted):
    """Answers a template question with the context's first word of the matching POS."""

    backend_id = "stub-answerer"

    def __init__(self, parser=None, templates=None):
        super().__init__()
        from ..qa import RuleBasedParser, default_templates

        self.parser = parser or RuleBasedParser()
        templates = templates or default_templates()
        self._pos_by_prefix = {t.text.split("ADJ TYPE")[0]: t.pos for t in templates}

    def answer_question(self, question, context):
        self._tick()
        pos = next(
            (p for prefix, p in self._pos_by_prefix.items() if question.startswith(prefix)),
            None,
        )
        for word, tag in self.parser.tag(context):
            if tag == pos:
                return word
        return ""

