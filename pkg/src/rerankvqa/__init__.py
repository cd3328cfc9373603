"""Zero-shot visual question answering with frozen models.

Question-relevant image patches are captioned, the captions reranked
against the question and summarized, exemplar QA pairs are synthesized from
them, and everything is serialized into a prompt for a frozen language
model.
"""

__version__ = "0.1.0"

from .answering import normalize_answer
from .config import PipelineConfig, load_config
from .evaluation import aggregate, load_aokvqa, load_okvqa, vqa_soft_accuracy
from .prompting import PromptBundle, build_prompt
from .vqa import CaptionRerankVQA

__all__ = [
    "CaptionRerankVQA",
    "PipelineConfig",
    "PromptBundle",
    "aggregate",
    "build_prompt",
    "load_aokvqa",
    "load_config",
    "load_okvqa",
    "normalize_answer",
    "vqa_soft_accuracy",
]
