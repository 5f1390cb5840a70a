"""Writer for the binary latent-store format consumed by the fusion toolkit.

This module re-implements the on-disk contract from its documented layout so
the extractor has no code dependency on the consumer -- the files are the
interface. Layout (integers little-endian)::

    bytes  0-3   magic  "FXLS"
    bytes  4-7   version, u32 (currently 1)
    bytes  8-11  dim,     u32 (latent dimension)
    bytes 12-19  count,   u64 (number of rows)
    bytes 20-35  modality tag, 16 bytes zero-padded ASCII
    bytes 36-    count * dim float32 values, row-major

A store is two such files plus a JSON manifest carrying ``path_x``,
``path_y``, ``count`` and 64-bit hex BLAKE2b ``checksum_x``/``checksum_y``
of the full file bytes. Latents are written as 32-bit floats regardless of
the precision the encoder ran at.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FXLS"
VERSION = 1
HEADER = struct.Struct("<4sIIQ16s")
HEADER_SIZE = HEADER.size
TAG_BYTES = 16

FILE_X = "latents_x.fxl"
FILE_Y = "latents_y.fxl"
MANIFEST = "manifest.json"


class FormatError(ValueError):
    """Raised when data cannot be expressed in (or read from) the format."""


def file_checksum(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def encoder_tag(encoder_id: str) -> str:
    """Squeeze an encoder identifier into the 16-byte ASCII tag field."""
    cleaned = "".join(c if (c.isascii() and c.isalnum()) or c in "-_." else "-"
                      for c in encoder_id)
    return cleaned[-TAG_BYTES:]


def write_latent_file(path, rows: np.ndarray, tag: str) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise FormatError("latent rows must form a non-empty 2-D matrix")
    if not np.all(np.isfinite(rows)):
        raise FormatError("latent rows contain non-finite values")
    raw_tag = tag.encode("ascii")
    if len(raw_tag) > TAG_BYTES:
        raise FormatError(f"tag {tag!r} longer than {TAG_BYTES} bytes")
    count, dim = rows.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, dim, count,
                            raw_tag.ljust(TAG_BYTES, b"\x00")))
        f.write(rows.tobytes())


def read_latent_file(path) -> tuple[np.ndarray, str]:
    """Load a latent file fully into memory; returns (rows, tag)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"truncated latent file: {path}")
    magic, version, dim, count, raw_tag = HEADER.unpack(blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} in {path}")
    expected = HEADER_SIZE + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(
            f"{path} holds {len(blob)} bytes, header promises {expected}")
    rows = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(count, dim)
    return rows.copy(), raw_tag.rstrip(b"\x00").decode("ascii")


def write_manifest(out_dir, count: int, skipped: list[int]) -> dict:
    """Checksum the two latent files in ``out_dir`` and write the manifest."""
    out_dir = Path(out_dir)
    manifest = {
        "path_x": FILE_X,
        "path_y": FILE_Y,
        "count": count,
        "checksum_x": file_checksum(out_dir / FILE_X),
        "checksum_y": file_checksum(out_dir / FILE_Y),
        "skipped_indices": list(skipped),
    }
    (out_dir / MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest
