"""Frozen encoders that map one modality's inputs to pooled latent vectors.

Two families are supported:

* ``builtin:token-hash-<dim>`` and ``builtin:bytes-hash-<dim>`` -- fully
  offline, deterministic stand-ins that derive each vector from a content
  hash. They share the real encoders' contract (fixed dim, identical input
  gives identical output, near-orthogonal outputs for distinct inputs) and
  are what the test-suite runs against.
* any other identifier -- treated as a model-hub checkpoint name and loaded
  through ``transformers``. The pooled penultimate representation is the
  class token when ``pooling="cls"`` or the (mask-weighted) token mean when
  ``pooling="mean"``.

Joining two identifiers with ``+`` concatenates their latents per item, for
audio setups that fuse a pair of frozen audio encoders; the output dimension
is the sum (double, for twins) of the parts.

Every encoder is used in inference mode only and is released when extraction
finishes; nothing about the model is persisted.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np

BUILTIN_PREFIX = "builtin:"
POOLINGS = ("cls", "mean")
MODALITIES = ("image", "text", "audio")


class EncoderError(RuntimeError):
    """Encoder cannot be built or cannot process a batch."""


def _hash_vector(payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim).astype(np.float32)


class TokenHashEncoder:
    """Deterministic text encoder: one pseudo-random direction per token.

    ``cls`` pooling hashes the whole string (a stand-in for a class token
    that has seen full context); ``mean`` pooling averages per-token
    vectors, so texts sharing words land measurably closer.
    """

    reads_files = False

    def __init__(self, dim: int):
        self.dim = dim

    def encode_batch(self, items, pooling: str) -> np.ndarray:
        rows = np.empty((len(items), self.dim), dtype=np.float32)
        for i, text in enumerate(items):
            if pooling == "cls":
                rows[i] = _hash_vector(b"cls\x00" + text.encode("utf-8"),
                                       self.dim)
            else:
                tokens = text.split() or [""]
                acc = np.zeros(self.dim, dtype=np.float64)
                for tok in tokens:
                    acc += _hash_vector(b"tok\x00" + tok.encode("utf-8"),
                                        self.dim)
                rows[i] = (acc / len(tokens)).astype(np.float32)
        return rows


class BytesHashEncoder:
    """Deterministic file encoder: one vector per distinct file content."""

    reads_files = True

    def __init__(self, dim: int):
        self.dim = dim

    def encode_batch(self, items, pooling: str) -> np.ndarray:
        return np.stack([_hash_vector(b"raw\x00" + blob, self.dim)
                         for blob in items])


class ConcatEncoder:
    """Run several encoders on each item and concatenate their latents."""

    def __init__(self, parts):
        kinds = {part.reads_files for part in parts}
        if len(kinds) != 1:
            raise EncoderError(
                "cannot concatenate encoders with different input kinds")
        self.parts = list(parts)
        self.reads_files = parts[0].reads_files
        self.dim = sum(part.dim for part in parts)

    def encode_batch(self, items, pooling: str) -> np.ndarray:
        return np.concatenate(
            [part.encode_batch(items, pooling) for part in self.parts], axis=1)


class HubTextEncoder:
    """A frozen model-hub text encoder pooled on its final token states."""

    reads_files = False

    def __init__(self, model_name: str):
        try:
            from transformers import AutoModel, AutoTokenizer
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name)
        except Exception as exc:  # load failures take many shapes
            raise EncoderError(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    def encode_batch(self, items, pooling: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            enc = self.tokenizer(list(items), padding=True, truncation=True,
                                 return_tensors="pt")
            hidden = self.model(**enc).last_hidden_state
            if pooling == "cls":
                pooled = hidden[:, 0, :]
            else:
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
        return pooled.float().cpu().numpy().astype(np.float32)


class HubImageEncoder:
    """A frozen model-hub vision encoder fed decoded image bytes."""

    reads_files = True

    def __init__(self, model_name: str):
        try:
            from transformers import AutoImageProcessor, AutoModel
            self.processor = AutoImageProcessor.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderError(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    def encode_batch(self, items, pooling: str) -> np.ndarray:
        import torch
        from PIL import Image

        images = [Image.open(io.BytesIO(blob)).convert("RGB") for blob in items]
        with torch.no_grad():
            enc = self.processor(images=images, return_tensors="pt")
            hidden = self.model(**enc).last_hidden_state
            pooled = hidden[:, 0, :] if pooling == "cls" else hidden.mean(dim=1)
        return pooled.float().cpu().numpy().astype(np.float32)


def _build_single(encoder_id: str, modality: str):
    if encoder_id.startswith(BUILTIN_PREFIX):
        name = encoder_id[len(BUILTIN_PREFIX):]
        kind, _, dim_text = name.rpartition("-")
        if not dim_text.isdigit() or int(dim_text) < 1:
            raise EncoderError(f"builtin encoder needs a dimension: {encoder_id!r}")
        dim = int(dim_text)
        if kind == "token-hash":
            return TokenHashEncoder(dim)
        if kind == "bytes-hash":
            return BytesHashEncoder(dim)
        raise EncoderError(f"unknown builtin encoder {encoder_id!r}")
    if modality == "text":
        return HubTextEncoder(encoder_id)
    if modality == "image":
        return HubImageEncoder(encoder_id)
    raise EncoderError(
        "audio extraction runs on builtin encoders (hub audio checkpoints "
        f"need task-specific preprocessing): {encoder_id!r}")


def build_encoder(encoder_id: str, modality: str):
    """Construct the encoder for one extraction pass.

    The returned object exposes ``reads_files`` (whether refs are paths to
    load), ``dim``, and ``encode_batch(items, pooling)``.
    """
    if modality not in MODALITIES:
        raise EncoderError(f"modality must be one of {MODALITIES}, got {modality!r}")
    parts = [p.strip() for p in encoder_id.split("+")]
    if any(not p for p in parts):
        raise EncoderError(f"malformed encoder identifier {encoder_id!r}")
    built = [_build_single(part, modality) for part in parts]
    encoder = built[0] if len(built) == 1 else ConcatEncoder(built)
    if modality == "text" and encoder.reads_files:
        raise EncoderError("text refs are literal strings; use a text encoder")
    if modality in ("image", "audio") and not encoder.reads_files:
        raise EncoderError(f"{modality} refs are file paths; use a file encoder")
    return encoder
