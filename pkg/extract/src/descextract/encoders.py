"""Encoder registry: model identifiers are free-form strings resolved here.

Schemes:
  debug:<dims>            deterministic content-hash encoder (testing, CI)
  hf-clip:<model-id>      CLIP-family text+image encoders via transformers
  hf-vision:<model-id>    vision-only reference encoder (CLS token) via transformers

The debug encoder maps input bytes through SHA-256 to a seeded Gaussian
vector, so identical inputs give identical rows on any machine and corrupt
inputs fail at decode time like the real pipelines.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .errors import ModelLoadError


class Encoder(Protocol):
    dims: int

    def encode_images(self, images: Sequence) -> np.ndarray: ...

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray: ...


class DebugHashEncoder:
    """Deterministic stand-in encoder driven by content hashes."""

    def __init__(self, dims: int):
        if dims < 1:
            raise ModelLoadError(f"debug encoder needs dims >= 1, got {dims}")
        self.dims = dims

    def _vector(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dims).astype(np.float32)

    def encode_images(self, images: Sequence) -> np.ndarray:
        rows = []
        for img in images:
            rgb = img.convert("RGB")
            header = f"{rgb.width}x{rgb.height}".encode()
            rows.append(self._vector(header + np.asarray(rgb).tobytes()))
        return np.stack(rows)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._vector(t.encode("utf-8")) for t in texts])


class HFCLIPEncoder:
    """CLIP-family dual encoder through transformers (optional dependency)."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable for {model_id!r}: {exc}") from exc
        try:
            self._torch = torch
            self.model = CLIPModel.from_pretrained(model_id).eval()
            self.processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load CLIP model {model_id!r}: {exc}") from exc
        self.dims = int(self.model.config.projection_dim)

    def encode_images(self, images: Sequence) -> np.ndarray:
        inputs = self.processor(images=list(images), return_tensors="pt")
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        inputs = self.processor(text=list(texts), return_tensors="pt", padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


class HFVisionEncoder:
    """Vision-only reference encoder (CLS token of the last hidden state)."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import AutoImageProcessor, AutoModel
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable for {model_id!r}: {exc}") from exc
        try:
            self._torch = torch
            self.model = AutoModel.from_pretrained(model_id).eval()
            self.processor = AutoImageProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load vision model {model_id!r}: {exc}") from exc
        self.dims = int(self.model.config.hidden_size)

    def encode_images(self, images: Sequence) -> np.ndarray:
        inputs = self.processor(images=list(images), return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**inputs)
        return out.last_hidden_state[:, 0].cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise ModelLoadError("vision-only encoders cannot embed text")


def resolve(model_id: str) -> Encoder:
    scheme, _, rest = model_id.partition(":")
    if scheme == "debug":
        try:
            return DebugHashEncoder(int(rest))
        except ValueError as exc:
            raise ModelLoadError(f"debug encoder needs integer dims, got {rest!r}") from exc
    if scheme == "hf-clip":
        return HFCLIPEncoder(rest)
    if scheme == "hf-vision":
        return HFVisionEncoder(rest)
    raise ModelLoadError(
        f"unknown encoder {model_id!r}; use debug:<dims>, hf-clip:<id> or hf-vision:<id>"
    )
