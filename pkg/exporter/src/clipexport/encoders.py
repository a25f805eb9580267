"""Encoder registry.

Two families:

- ``hashproj-<dim>``: a deterministic offline feature extractor (downsampled
  pixels and hashed text tokens through fixed Gaussian projections). No
  model weights, no network; the same inputs always produce the same
  vectors, on any machine. This is the default for development and tests.
- ``clip:<huggingface-model>``: a real vision-language encoder loaded via
  transformers. Needs the model weights available locally or a network
  connection; raises a clear error otherwise.
"""
from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


class EncoderError(RuntimeError):
    """The requested encoder cannot be constructed in this environment."""


def _seed_from(label: str) -> np.random.Generator:
    digest = hashlib.sha256(label.encode()).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))


class HashProjectionEncoder:
    """Seeded random projections of raw pixels and hashed token counts."""

    PIXELS = 32 * 32 * 3
    VOCAB = 8192

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError(f"hashproj dim must be >= 2, got {dim}")
        self.dim = dim
        self.name = f"hashproj-{dim}"
        self._image_proj = _seed_from(f"{self.name}/image").normal(
            0.0, 1.0 / np.sqrt(self.PIXELS), size=(self.PIXELS, dim)).astype(np.float32)
        self._text_proj = _seed_from(f"{self.name}/text").normal(
            0.0, 1.0, size=(self.VOCAB, dim)).astype(np.float32)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        rows = []
        for img in images:
            small = img.convert("RGB").resize((32, 32), Image.BILINEAR)
            pixels = np.asarray(small, dtype=np.float32).reshape(-1) / 255.0
            rows.append(pixels @ self._image_proj)
        return np.stack(rows).astype(np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            counts = np.zeros(self.VOCAB, dtype=np.float32)
            tokens = text.lower().split()
            for tok in tokens:
                idx = int.from_bytes(hashlib.sha256(tok.encode()).digest()[:4],
                                     "little") % self.VOCAB
                counts[idx] += 1.0
            if tokens:
                counts /= np.sqrt(len(tokens))
            rows.append(counts @ self._text_proj)
        return np.stack(rows).astype(np.float32)


class ClipEncoder:
    """Pretrained CLIP via transformers; image and text share the output width."""

    def __init__(self, model_name: str, device: str | None = None):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError("clip encoders need the 'clip' extra "
                               "(transformers + torch)") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderError(
                f"encoder {model_name!r} unavailable (no local cache and/or "
                f"no network): {exc}") from exc
        self._torch = torch
        self._device = device or "cpu"
        self._model.to(self._device).eval()
        self.dim = self._model.config.projection_dim
        self.name = f"clip:{model_name}"

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self._processor(images=images, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self._processor(text=texts, return_tensors="pt", padding=True,
                                 truncation=True).to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


def get_encoder(name: str, device: str | None = None):
    """Build an encoder from its name; see the module docstring for the forms."""
    if name.startswith("hashproj-"):
        try:
            dim = int(name.removeprefix("hashproj-"))
        except ValueError:
            raise EncoderError(f"bad hashproj encoder name {name!r}") from None
        return HashProjectionEncoder(dim)
    if name.startswith("clip:"):
        return ClipEncoder(name.removeprefix("clip:"), device)
    raise EncoderError(f"unknown encoder {name!r}; use 'hashproj-<dim>' or 'clip:<model>'")
