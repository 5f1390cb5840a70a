"""Extraction passes and pairing: from refs to a consumable latent store.

One call to :func:`extract` runs one encoder over one modality's refs --
never both at once, so only a single frozen model is resident -- and writes
the pooled vectors in listing order. Inputs that cannot be read are skipped
with a logged index; :func:`pair_and_manifest` later drops the companion
rows of every skip so the two sides stay index-aligned, and records the
skipped listing indices in the manifest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import format as fmt
from .encoders import MODALITIES, POOLINGS, build_encoder

logger = logging.getLogger("latentextract")


class ExtractError(RuntimeError):
    """Extraction or pairing cannot produce a valid store."""


@dataclass(frozen=True)
class ExtractSpec:
    """Settings for one extraction pass over one modality."""

    encoder: str
    modality: str  # "image" | "text" | "audio"
    pooling: str = "cls"
    batch_size: int = 16
    out_dir: str = "."

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass(frozen=True)
class ExtractResult:
    """What one pass produced: the file plus bookkeeping for pairing."""

    path: Path
    count: int
    dim: int
    skipped: tuple[int, ...]  # listing indices with unreadable inputs


def extract(spec: ExtractSpec, refs, filename: str) -> ExtractResult:
    """Encode ``refs`` in order into ``out_dir/filename``.

    For file-backed modalities each ref is a path whose bytes are loaded
    up front; unreadable paths are skipped (logged with their listing
    index). Text refs are encoded literally and never skip. The encoder is
    constructed here and garbage-collected on return.
    """
    refs = list(refs)
    if not refs:
        raise ExtractError("no input refs")
    encoder = build_encoder(spec.encoder, spec.modality)

    items, skipped = [], []
    for index, ref in enumerate(refs):
        if encoder.reads_files:
            try:
                items.append(Path(ref).read_bytes())
            except OSError as exc:
                logger.warning("skipping unreadable input %d (%s): %s",
                               index, ref, exc)
                skipped.append(index)
        else:
            items.append(ref)
    if not items:
        raise ExtractError("every input was unreadable")

    blocks = [encoder.encode_batch(items[i:i + spec.batch_size], spec.pooling)
              for i in range(0, len(items), spec.batch_size)]
    rows = np.concatenate(blocks, axis=0).astype(np.float32)

    path = Path(spec.out_dir) / filename
    fmt.write_latent_file(path, rows, fmt.encoder_tag(spec.encoder))
    return ExtractResult(path=path, count=rows.shape[0], dim=rows.shape[1],
                         skipped=tuple(skipped))


def pair_and_manifest(result_x: ExtractResult, result_y: ExtractResult,
                      out_dir) -> dict:
    """Reconcile two extraction passes into one index-aligned store.

    Both passes must come from the same listing: each side's row count plus
    its skip count must equal the same listing length. Rows whose listing
    index was skipped on either side are dropped from both, then the final
    files and the manifest are written into ``out_dir``.
    """
    n_x = result_x.count + len(result_x.skipped)
    n_y = result_y.count + len(result_y.skipped)
    if n_x != n_y:
        raise ExtractError(
            f"irreconcilable counts: X covers {n_x} listing rows, Y covers {n_y}")

    drop = set(result_x.skipped) | set(result_y.skipped)
    rows_x, tag_x = fmt.read_latent_file(result_x.path)
    rows_y, tag_y = fmt.read_latent_file(result_y.path)
    if rows_x.shape[0] != result_x.count or rows_y.shape[0] != result_y.count:
        raise ExtractError("latent file row counts disagree with the results")

    def survivors(rows, own_skips):
        present = [i for i in range(n_x) if i not in set(own_skips)]
        keep = [r for r, listing_index in enumerate(present)
                if listing_index not in drop]
        return rows[keep]

    final_x = survivors(rows_x, result_x.skipped)
    final_y = survivors(rows_y, result_y.skipped)
    if final_x.shape[0] == 0:
        raise ExtractError("no pairs survive skip reconciliation")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt.write_latent_file(out_dir / fmt.FILE_X, final_x, tag_x)
    fmt.write_latent_file(out_dir / fmt.FILE_Y, final_y, tag_y)
    return fmt.write_manifest(out_dir, final_x.shape[0], sorted(drop))
