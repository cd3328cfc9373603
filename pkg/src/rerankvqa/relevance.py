"""Question-conditioned patch relevance and top-K patch selection.

The attention tensor and its gradients come from the captioner backend; this
module is plain array arithmetic and never touches a model.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_matrix
from .exceptions import ShapeError, ValidationError

RECTIFY_MODES = ("positive", "negative")
STRATEGIES = ("deterministic_topk", "weighted_sample")

DEFAULT_TOP_K_PATCHES = 20
SAMPLING_EPS = 1e-12
_PROB_TOL = 1e-6


@dataclass(frozen=True)
class FeatureMatrices:
    text_features: np.ndarray
    patch_features: np.ndarray
    query_proj: np.ndarray
    key_proj: np.ndarray

    def __post_init__(self):
        for name in ("text_features", "patch_features", "query_proj", "key_proj"):
            object.__setattr__(self, name, check_matrix(getattr(self, name), name))
        if self.text_features.shape[1] != self.query_proj.shape[0]:
            raise ShapeError(
                f"text_features {self.text_features.shape} incompatible with "
                f"query_proj {self.query_proj.shape}"
            )
        if self.patch_features.shape[1] != self.key_proj.shape[0]:
            raise ShapeError(
                f"patch_features {self.patch_features.shape} incompatible with "
                f"key_proj {self.key_proj.shape}"
            )
        if self.query_proj.shape[1] != self.key_proj.shape[1]:
            raise ShapeError(
                f"query_proj {self.query_proj.shape} and key_proj "
                f"{self.key_proj.shape} project to different head sizes"
            )


@dataclass(frozen=True)
class AttentionTensor:
    """Cross-attention probabilities ``[heads, tokens, patches]`` and their gradients."""

    values: np.ndarray
    grads: np.ndarray

    def __post_init__(self):
        values = check_matrix(self.values, "values", ndim=3)
        grads = check_matrix(self.grads, "grads", ndim=3)
        if values.shape != grads.shape:
            raise ShapeError(f"values {values.shape} and grads {grads.shape} differ")
        if values.min() < 0 or not np.allclose(values.sum(axis=-1), 1.0, rtol=0, atol=_PROB_TOL):
            raise ValidationError("each attention row must be a probability vector")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "grads", grads)

    @property
    def n_patches(self):
        return self.values.shape[-1]


@dataclass(frozen=True)
class RelevanceMap:
    scores: np.ndarray
    rectify_mode: str = "positive"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "scores", check_matrix(self.scores, "scores", ndim=1))
        if self.rectify_mode not in RECTIFY_MODES:
            raise ValidationError(f"unknown rectify_mode {self.rectify_mode!r}")

    def __len__(self):
        return len(self.scores)

    def to_dict(self):
        return {
            "scores": self.scores.tolist(),
            "rectify_mode": self.rectify_mode,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["scores"], dtype=np.float64), d["rectify_mode"], dict(d["meta"]))


@dataclass(frozen=True)
class PatchSelection:
    indices: tuple
    k: int
    strategy: str = "deterministic_topk"
    seed: int = 0
    n_patches: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError("patch indices must be distinct")

    @classmethod
    def whole_image(cls):
        """An empty selection: captions are conditioned on the full image."""
        return cls(indices=(), k=0, meta={"whole_image": True})

    def to_dict(self):
        return {
            "indices": list(self.indices),
            "k": self.k,
            "strategy": self.strategy,
            "seed": self.seed,
            "n_patches": self.n_patches,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["indices"]), d["k"], d["strategy"], d["seed"], d["n_patches"], dict(d["meta"])
        )


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_attention_scores(features):
    """Row-wise softmax of scaled query/key products between tokens and patches.

    Returns an ``[n_tokens, n_patches]`` matrix whose rows sum to one. The
    scale is the square root of the text feature width.
    """
    if not isinstance(features, FeatureMatrices):
        features = FeatureMatrices(*features)
    d_q = features.text_features.shape[1]
    queries = features.text_features @ features.query_proj
    keys = features.patch_features @ features.key_proj
    return _softmax_rows(queries @ keys.T / np.sqrt(d_q))


def patch_relevance(attn, rectify_mode="positive", meta=None):
    """Gradient-weighted attention relevance of every patch.

    Per head, gradients are rectified (``max(0, .)`` for ``positive``,
    ``min(0, .)`` for ``negative``), multiplied with the attention values and
    summed over tokens; the result is averaged over heads.
    """
    if rectify_mode not in RECTIFY_MODES:
        raise ValidationError(f"unknown rectify_mode {rectify_mode!r}")
    if not isinstance(attn, AttentionTensor):
        attn = AttentionTensor(*attn)
    if rectify_mode == "positive":
        rectified = np.maximum(attn.grads, 0.0)
    else:
        rectified = np.minimum(attn.grads, 0.0)
    per_head = (rectified * attn.values).sum(axis=1)
    scores = per_head.mean(axis=0)
    # avoid -0.0 leaking into serialized caches
    scores = scores + 0.0
    return RelevanceMap(scores, rectify_mode, dict(meta or {}))


def _topk_order(scores, k):
    # stable sort on negated scores: ties keep the lower index first
    return np.argsort(-scores, kind="stable")[:k]


def sample_patches(relevance, k=DEFAULT_TOP_K_PATCHES, strategy="deterministic_topk", seed=0):
    """Pick ``min(k, n_patches)`` patch ids from a relevance map.

    ``deterministic_topk`` returns the highest scoring ids in nonincreasing
    score order. ``weighted_sample`` draws distinct ids with probability
    proportional to ``max(score, 0) + 1e-12``; when no score is positive the
    draw is uniform and ``meta["uniform_fallback"]`` is set.
    """
    k = check_count(k, "k")
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    scores = relevance.scores if isinstance(relevance, RelevanceMap) else check_matrix(
        relevance, "scores", ndim=1
    )
    m = len(scores)
    take = min(k, m)
    meta = {}
    if strategy == "deterministic_topk":
        indices = _topk_order(scores, take)
    else:
        weights = np.maximum(scores, 0.0)
        if not np.any(weights > 0):
            meta["uniform_fallback"] = True
        weights = weights + SAMPLING_EPS
        rng = np.random.default_rng(seed)
        indices = rng.choice(m, size=take, replace=False, p=weights / weights.sum())
    return PatchSelection(tuple(indices.tolist()), k, strategy, seed, m, meta)


class PatchSelector(TransformerMixin, BaseEstimator):
    """Turn attention tensors into patch selections.

    ``transform`` accepts a sequence of :class:`AttentionTensor` and returns
    one :class:`PatchSelection` per tensor. There is nothing to learn;
    ``fit`` only validates parameters.
    """

    def __init__(self, k=DEFAULT_TOP_K_PATCHES, strategy="deterministic_topk",
                 rectify_mode="positive", seed=0):
        self.k = k
        self.strategy = strategy
        self.rectify_mode = rectify_mode
        self.seed = seed

    def fit(self, X=None, y=None):
        check_count(self.k, "k")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.rectify_mode not in RECTIFY_MODES:
            raise ValidationError(f"unknown rectify_mode {self.rectify_mode!r}")
        self.is_fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self)
        return [
            sample_patches(patch_relevance(a, self.rectify_mode), self.k, self.strategy, self.seed)
            for a in X
        ]
