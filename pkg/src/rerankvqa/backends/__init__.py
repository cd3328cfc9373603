"""Backend registry.

Backends are named ``kind`` or ``kind:checkpoint`` in configs, e.g.
``stub``, ``blip:Salesforce/blip-image-captioning-large``,
``cross-encoder:BAAI/bge-reranker-large``, ``hf-causal:facebook/opt-6.7b``.
``stub:fail`` is a stub captioner whose every generation raises.
"""

from ..exceptions import ConfigError
from ..qa import LMAnswerer
from .stubs import (
    ScriptedCaptioner,
    ScriptedLanguageModel,
    StubAnswerer,
    StubCaptioner,
    StubLanguageModel,
    StubReranker,
    TableReranker,
    stable_hash,
)

__all__ = [
    "ScriptedCaptioner",
    "ScriptedLanguageModel",
    "StubAnswerer",
    "StubCaptioner",
    "StubLanguageModel",
    "StubReranker",
    "TableReranker",
    "build_backend",
    "stable_hash",
]

ROLES = ("captioner", "reranker", "summarizer", "llm", "answerer")


def _split(name):
    kind, _, checkpoint = name.partition(":")
    return kind, checkpoint or None


def build_backend(role, name, image_root=".", shared=None):
    """Instantiate the backend ``name`` for pipeline ``role``.

    ``shared`` maps already-built backends by role; the answerer named
    ``lm`` reuses the configured ``llm`` backend.
    """
    if role not in ROLES:
        raise ConfigError(f"unknown backend role {role!r}")
    kind, checkpoint = _split(name)
    shared = shared or {}

    if kind == "stub":
        if role == "captioner" and checkpoint == "fail":
            # every caption call raises; exercises failure handling end to end
            return StubCaptioner(fail_on=("*",))
        return {
            "captioner": StubCaptioner,
            "reranker": StubReranker,
            "summarizer": StubLanguageModel,
            "llm": StubLanguageModel,
            "answerer": StubAnswerer,
        }[role]()

    from . import hf

    if role == "captioner" and kind == "blip":
        kw = {"caption_checkpoint": checkpoint} if checkpoint else {}
        return hf.BlipCaptioner(image_root=image_root, **kw)
    if role == "reranker" and kind == "cross-encoder":
        return hf.CrossEncoderReranker(checkpoint or "BAAI/bge-reranker-large")
    if role in ("summarizer", "llm") and kind == "hf-causal":
        return hf.HFCausalLM(checkpoint or "facebook/opt-6.7b")
    if role == "answerer" and kind == "lm":
        if "llm" not in shared:
            raise ConfigError("answerer 'lm' needs the llm backend built first")
        return LMAnswerer(shared["llm"])
    raise ConfigError(f"no {role} backend named {name!r}")
