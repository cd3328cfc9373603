"""Pipeline configuration: defaults, config files and hashing.

Config files are INI-style with a single ``[pipeline]`` section whose keys
are the :class:`PipelineConfig` field names::

    [pipeline]
    dataset = okvqa
    question_file = data/OpenEnded_mscoco_val2014_questions.json
    annotation_file = data/mscoco_val2014_annotations.json
    image_root = data/coco
    captioner = blip
    reranker = cross-encoder:BAAI/bge-reranker-large
    llm = hf-causal:facebook/opt-6.7b
    summarizer = hf-causal:google/gemma-2b
    answerer = lm

Command-line flags override file values.
"""

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields

from .evaluation import DATASETS
from .exceptions import ConfigError
from .prompting import DEFAULT_CONTENT, DEFAULT_FORMAT, PROMPT_CONTENTS, PROMPT_FORMATS
from .relevance import DEFAULT_TOP_K_PATCHES, RECTIFY_MODES, STRATEGIES
from .rerank import DEFAULT_RERANK_KEEP
from .summarize import DEFAULT_SUMMARY_LENGTH, MIN_TARGET_LENGTH

CACHE_ENV = "RERANKVQA_CACHE_DIR"

# fields that change how a run executes but not what it computes
OPERATIONAL_FIELDS = frozenset({"cache_dir", "workers", "strict", "image_root"})


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "okvqa"
    split: str = "val"
    question_file: str | None = None
    annotation_file: str | None = None
    image_root: str = "."
    captioner: str = "stub"
    reranker: str = "stub"
    summarizer: str = "stub"
    llm: str = "stub"
    answerer: str = "stub"
    top_k_patches: int = DEFAULT_TOP_K_PATCHES
    patch_strategy: str = "deterministic_topk"
    rectify_mode: str = "positive"
    num_captions: int | None = None
    rerank_keep: int = DEFAULT_RERANK_KEEP
    summary_length: int | None = None
    max_qa_pairs: int = 30
    prompt_format: str = DEFAULT_FORMAT
    prompt_content: str = DEFAULT_CONTENT
    instruction: str | None = None
    max_new_tokens: int = 10
    seed: int = 0
    cache_dir: str | None = None
    max_items: int | None = None
    workers: int = 1
    strict: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        for name in ("top_k_patches", "rerank_keep", "max_qa_pairs", "max_new_tokens",
                     "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("num_captions", "max_items"):
            if getattr(self, name) is not None and getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.summary_length is not None and self.summary_length < MIN_TARGET_LENGTH:
            raise ConfigError(f"summary_length must be >= {MIN_TARGET_LENGTH}")
        if self.prompt_format not in PROMPT_FORMATS:
            raise ConfigError(f"unknown prompt_format {self.prompt_format!r}")
        if self.prompt_content not in PROMPT_CONTENTS:
            raise ConfigError(f"unknown prompt_content {self.prompt_content!r}")
        if self.patch_strategy not in STRATEGIES:
            raise ConfigError(f"unknown patch_strategy {self.patch_strategy!r}")
        if self.rectify_mode not in RECTIFY_MODES:
            raise ConfigError(f"unknown rectify_mode {self.rectify_mode!r}")

    @property
    def effective_summary_length(self):
        return self.summary_length or DEFAULT_SUMMARY_LENGTH[self.dataset]

    @property
    def effective_cache_dir(self):
        return self.cache_dir or os.environ.get(CACHE_ENV)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """Hash of the result-affecting fields; independent of field order."""
        d = {k: v for k, v in self.to_dict().items() if k not in OPERATIONAL_FIELDS}
        d["summary_length"] = self.effective_summary_length
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def estimator_params(self):
        """Keyword arguments for :class:`~rerankvqa.vqa.CaptionRerankVQA` (backends excluded)."""
        return {
            "top_k_patches": self.top_k_patches,
            "patch_strategy": self.patch_strategy,
            "rectify_mode": self.rectify_mode,
            "num_captions": self.num_captions,
            "rerank_keep": self.rerank_keep,
            "summary_length": self.effective_summary_length,
            "max_qa_pairs": self.max_qa_pairs,
            "prompt_format": self.prompt_format,
            "prompt_content": self.prompt_content,
            "instruction": self.instruction,
            "max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
            "n_jobs": self.workers,
            "strict": self.strict,
        }


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def coerce(name, value):
    """Parse the string ``value`` for config field ``name``."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if value is None or not isinstance(value, str):
        return value
    typ = _FIELD_TYPES[name]
    options = getattr(typ, "__args__", (typ,))
    if value.strip().lower() in ("", "none", "null") and type(None) in options:
        return None
    try:
        if int in options:
            return int(value)
        if bool in options:
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return value


def load_config(path=None, **overrides):
    """Build a config from an optional INI file, then apply non-``None`` overrides."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if "pipeline" not in parser:
            raise ConfigError(f"{path}: missing [pipeline] section")
        for key, raw in parser["pipeline"].items():
            values[key] = coerce(key, raw)
    for key, value in overrides.items():
        if value is not None:
            values[key] = coerce(key, value)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
