"""Adapters over Hugging Face checkpoints.

Nothing here is imported until a backend is actually built, so the package
works without torch or transformers installed. Checkpoints are
configuration; the defaults match a BLIP-large / BGE-reranker / OPT stack.
"""

import logging
import threading
from pathlib import Path

import numpy as np

from ..captioning import CaptionerCapabilities
from ..exceptions import BackendError
from ..relevance import AttentionTensor

log = logging.getLogger(__name__)


def _torch():
    try:
        import torch
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise BackendError("torch is not installed; pip install rerankvqa[models]",
                           "hf", retriable=False) from exc
    return torch


def _device(device):
    torch = _torch()
    if device:
        return device
    return "cuda" if torch.cuda.is_available() else "cpu"


class BlipCaptioner:
    """BLIP captioner with GradCAM-ready cross-attention export.

    ``export_attention`` runs the image-text matching encoder, reads the
    cross-attention of ``attention_layer`` and differentiates the "match"
    logit with respect to it. ``generate`` keeps only the vision tokens of
    the requested patches (plus the global token) before decoding.
    """

    def __init__(self, caption_checkpoint="Salesforce/blip-image-captioning-large",
                 itm_checkpoint="Salesforce/blip-itm-large-coco", image_root=".",
                 attention_layer=7, device=None, top_p=0.9, max_length=30):
        self.caption_checkpoint = caption_checkpoint
        self.itm_checkpoint = itm_checkpoint
        self.image_root = Path(image_root)
        self.attention_layer = attention_layer
        self.device = device
        self.top_p = top_p
        self.max_length = max_length
        self.backend_id = f"blip:{caption_checkpoint}"
        self.capabilities = CaptionerCapabilities(
            max_captions_per_call=16, supports_patch_masking=True,
            supports_attention_export=True, max_concurrency=1,
        )
        self._lock = threading.Lock()
        self._cap = self._itm = None

    def _load(self):
        with self._lock:
            if self._cap is not None:
                return
            from transformers import (BlipForConditionalGeneration, BlipForImageTextRetrieval,
                                      BlipProcessor)

            self.device = _device(self.device)
            self._cap_proc = BlipProcessor.from_pretrained(self.caption_checkpoint)
            self._cap = BlipForConditionalGeneration.from_pretrained(
                self.caption_checkpoint).to(self.device).eval()
            self._itm_proc = BlipProcessor.from_pretrained(self.itm_checkpoint)
            self._itm = BlipForImageTextRetrieval.from_pretrained(
                self.itm_checkpoint, attn_implementation="eager").to(self.device).eval()

    def _image(self, image_ref):
        from PIL import Image

        path = self.image_root / image_ref
        try:
            return Image.open(path).convert("RGB")
        except OSError as exc:
            raise BackendError(f"cannot read image {path}: {exc}", self.backend_id,
                               retriable=False) from exc

    def export_attention(self, image_ref, question_text):
        torch = _torch()
        self._load()
        inputs = self._itm_proc(images=self._image(image_ref), text=question_text,
                                return_tensors="pt").to(self.device)
        image_embeds = self._itm.vision_model(pixel_values=inputs.pixel_values).last_hidden_state
        image_atts = torch.ones(image_embeds.shape[:-1], dtype=torch.long, device=self.device)
        out = self._itm.text_encoder(
            input_ids=inputs.input_ids, attention_mask=inputs.attention_mask,
            encoder_hidden_states=image_embeds, encoder_attention_mask=image_atts,
            output_attentions=True, return_dict=True,
        )
        cross = out.cross_attentions[self.attention_layer]
        match_logit = self._itm.itm_head(out.last_hidden_state[:, 0, :])[:, 1].sum()
        (grad,) = torch.autograd.grad(match_logit, cross)
        # drop [CLS]/[SEP] text tokens and the global image token
        values = cross[0, :, 1:-1, 1:].detach().double().cpu().numpy()
        grads = grad[0, :, 1:-1, 1:].double().cpu().numpy()
        values = values / values.sum(axis=-1, keepdims=True)
        return AttentionTensor(np.ascontiguousarray(values), np.ascontiguousarray(grads))

    def generate(self, image_ref, patch_indices, n, seed):
        torch = _torch()
        self._load()
        torch.manual_seed(seed)
        pixel_values = self._cap_proc(images=self._image(image_ref),
                                      return_tensors="pt").pixel_values.to(self.device)
        with torch.no_grad():
            embeds = self._cap.vision_model(pixel_values=pixel_values).last_hidden_state
            if patch_indices:
                keep = torch.tensor([0] + [i + 1 for i in patch_indices], device=self.device)
                embeds = embeds[:, keep]
            embeds = embeds.repeat_interleave(n, dim=0)
            cfg = self._cap.config.text_config
            input_ids = torch.full((n, 1), cfg.bos_token_id, dtype=torch.long, device=self.device)
            ids = self._cap.text_decoder.generate(
                input_ids=input_ids, eos_token_id=cfg.sep_token_id, pad_token_id=cfg.pad_token_id,
                encoder_hidden_states=embeds,
                encoder_attention_mask=torch.ones(embeds.shape[:-1], dtype=torch.long,
                                                  device=self.device),
                do_sample=True, top_p=self.top_p, max_length=self.max_length,
            )
        return [t.strip() for t in self._cap_proc.batch_decode(ids, skip_special_tokens=True)]


class CrossEncoderReranker:
    """Cross-encoder relevance of (question, caption) pairs, e.g. BGE rerankers."""

    def __init__(self, model_id="BAAI/bge-reranker-large", device=None, max_length=512):
        self.model_id = model_id
        self.device = device
        self.max_length = max_length
        self._model = None
        self._lock = threading.Lock()

    def _load(self):
        with self._lock:
            if self._model is None:
                from sentence_transformers import CrossEncoder

                self._model = CrossEncoder(self.model_id, device=_device(self.device),
                                           max_length=self.max_length)

    def score(self, question_text, caption_text):
        self._load()
        return float(self._model.predict([(question_text, caption_text)])[0])


class HFCausalLM:
    """Greedy completion with a causal language model (OPT, Gemma, Llama...)."""

    def __init__(self, checkpoint="facebook/opt-6.7b", device=None, dtype="float16",
                 max_concurrency=1):
        self.checkpoint = checkpoint
        self.device = device
        self.dtype = dtype
        self.max_concurrency = max_concurrency
        self.backend_id = f"hf-causal:{checkpoint}"
        self._model = None
        self._lock = threading.Lock()

    def _load(self):
        with self._lock:
            if self._model is not None:
                return
            torch = _torch()
            from transformers import AutoModelForCausalLM, AutoTokenizer

            self.device = _device(self.device)
            dtype = getattr(torch, self.dtype) if self.device != "cpu" else torch.float32
            self._tok = AutoTokenizer.from_pretrained(self.checkpoint)
            self._model = AutoModelForCausalLM.from_pretrained(
                self.checkpoint, dtype=dtype).to(self.device).eval()

    def complete(self, prompt_text, max_tokens, seed):
        torch = _torch()
        self._load()
        torch.manual_seed(seed)
        enc = self._tok(prompt_text, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self._model.generate(**enc, max_new_tokens=max_tokens, do_sample=False,
                                       pad_token_id=self._tok.eos_token_id)
        return self._tok.decode(out[0, enc.input_ids.shape[1]:], skip_special_tokens=True)
