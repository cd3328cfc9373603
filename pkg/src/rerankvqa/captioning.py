"""Region-conditioned captioning through a frozen captioner backend."""

import re
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ._validation import check_count
from .exceptions import BackendError, EmptyCaptionError, ValidationError
from .relevance import AttentionTensor


@dataclass(frozen=True)
class Caption:
    text: str
    patch_indices: tuple = ()
    backend_id: str = "unknown"
    gen_index: int = 0

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("caption text must be non-empty")
        if self.gen_index < 0:
            raise ValidationError("gen_index must be >= 0")
        object.__setattr__(self, "patch_indices", tuple(int(i) for i in self.patch_indices))

    def to_dict(self):
        return {
            "text": self.text,
            "patch_indices": list(self.patch_indices),
            "backend_id": self.backend_id,
            "gen_index": self.gen_index,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], tuple(d["patch_indices"]), d["backend_id"], d["gen_index"])


@dataclass(frozen=True)
class CaptionerCapabilities:
    max_captions_per_call: int = 1
    supports_patch_masking: bool = True
    supports_attention_export: bool = False
    max_concurrency: int = 1


@runtime_checkable
class CaptionerBackend(Protocol):
    backend_id: str
    capabilities: CaptionerCapabilities

    def generate(self, image_ref, patch_indices, n, seed) -> list:
        ...

    def export_attention(self, image_ref, question_text) -> AttentionTensor:
        ...


def conditioning_plan(selection, n):
    """Patch subsets for ``n`` captions: the whole image first, then one per patch.

    Cycles through the selected patches when ``n`` exceeds their number.
    """
    units = [()] + [(i,) for i in selection.indices]
    return [units[j % len(units)] for j in range(n)]


def generate_captions(image_ref, selection, n, backend, seed=0):
    """Caption ``image_ref`` once per entry of :func:`conditioning_plan`.

    Each call gets seed ``seed + j`` so deterministic backends are
    reproducible. Blank generations are dropped; if nothing is left,
    :class:`EmptyCaptionError` is raised.
    """
    n = check_count(n, "n")
    if selection.n_patches is not None:
        bad = [i for i in selection.indices if not 0 <= i < selection.n_patches]
        if bad:
            raise ValidationError(f"patch ids {bad} outside grid of {selection.n_patches}")
    plan = conditioning_plan(selection, n)
    backend_id = getattr(backend, "backend_id", type(backend).__name__)

    captions = []
    for j, patches in enumerate(plan):
        try:
            texts = backend.generate(image_ref, list(patches), 1, seed + j)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(str(exc), backend_id) from exc
        for text in texts[:1]:
            if isinstance(text, str) and text.strip():
                captions.append(Caption(text.strip(), patches, backend_id, len(captions)))
    if not captions:
        raise EmptyCaptionError(f"{backend_id} produced no usable caption for {image_ref!r}")
    return captions


_TERMINAL_PUNCT = ".!?,;:"


def caption_key(text):
    """Comparison key: lowercase, single-spaced, terminal punctuation stripped."""
    key = re.sub(r"\s+", " ", text.lower()).strip()
    return key.rstrip(_TERMINAL_PUNCT + " ")


def dedup_captions(captions):
    """Drop later captions whose :func:`caption_key` was already seen."""
    seen = set()
    kept = []
    for c in captions:
        key = caption_key(c.text)
        if key not in seen:
            seen.add(key)
            kept.append(c)
    return kept

