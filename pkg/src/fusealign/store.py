"""On-disk format for pre-computed unimodal latents and batch access.

A *latent store* is a pair of per-modality binary files plus a JSON manifest.
Each binary file holds index-aligned rows of 32-bit little-endian floats:
row ``i`` of the X file and row ``i`` of the Y file form one positive pair.
Keeping the modalities in separate files lets each one be extracted
independently; the manifest ties a specific pair of extraction runs together
via content checksums.

Binary layout (all integers little-endian)::

    bytes  0-3   magic  "FXLS"
    bytes  4-7   version, u32 (currently 1)
    bytes  8-11  dim,     u32 (latent dimension)
    bytes 12-19  count,   u64 (number of rows)
    bytes 20-35  modality tag, 16 bytes zero-padded ASCII
    bytes 36-    count * dim float32 values, row-major

The manifest is a UTF-8 JSON document with keys ``path_x``, ``path_y``,
``count``, ``checksum_x``, ``checksum_y``; paths are relative to the manifest
so a store directory can be moved as a unit.  Checksums are 64-bit BLAKE2b
digests of the full file contents, hex-encoded.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"FXLS"
VERSION = 1
HEADER = struct.Struct("<4sIIQ16s")
HEADER_SIZE = HEADER.size  # 36 bytes
TAG_BYTES = 16

FILE_X = "latents_x.fxl"
FILE_Y = "latents_y.fxl"
MANIFEST = "manifest.json"


class StoreError(ValueError):
    """Raised for malformed store files, manifests, or invalid access."""


def file_checksum(path: Path) -> str:
    """64-bit BLAKE2b digest of a file's full contents, hex-encoded."""
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class PairManifest:
    """Pairing record for two latent files whose rows are positive pairs."""

    path_x: str
    path_y: str
    count: int
    checksum_x: str
    checksum_y: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "path_x": self.path_x,
                "path_y": self.path_y,
                "count": self.count,
                "checksum_x": self.checksum_x,
                "checksum_y": self.checksum_y,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass
class Batch:
    """A slice of paired latents; rows are index-aligned across modalities."""

    z_x: np.ndarray
    z_y: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if self.z_x.shape[0] != self.z_y.shape[0]:
            raise StoreError("batch row counts differ between modalities")
        if self.z_x.shape[0] % 2 != 0:
            raise StoreError("batch row count must be even")


def _encode_tag(tag: str) -> bytes:
    raw = tag.encode("ascii")
    if len(raw) > TAG_BYTES:
        raise StoreError(f"modality tag {tag!r} longer than {TAG_BYTES} bytes")
    return raw.ljust(TAG_BYTES, b"\x00")


def _write_latent_file(path: Path, rows: np.ndarray, tag: str) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    count, dim = rows.shape
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, dim, count, _encode_tag(tag)))
        f.write(rows.tobytes())


def write_store(rows_x, rows_y, tags, out_dir) -> PairManifest:
    """Write two latent files plus a manifest; re-reading is bit-exact.

    ``rows_x`` and ``rows_y`` must have equal row counts, at least one row,
    and only finite values.  Returns the manifest (also written to
    ``out_dir/manifest.json``).
    """
    rows_x = np.asarray(rows_x, dtype=np.float32)
    rows_y = np.asarray(rows_y, dtype=np.float32)
    if rows_x.ndim != 2 or rows_y.ndim != 2:
        raise StoreError("latent rows must be 2-D matrices")
    if rows_x.shape[0] != rows_y.shape[0]:
        raise StoreError(
            f"mismatched row counts: {rows_x.shape[0]} vs {rows_y.shape[0]}"
        )
    if rows_x.shape[0] == 0:
        raise StoreError("empty store")
    if not (np.all(np.isfinite(rows_x)) and np.all(np.isfinite(rows_y))):
        raise StoreError("non-finite values in latent rows")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag_x, tag_y = tags
    _write_latent_file(out_dir / FILE_X, rows_x, tag_x)
    _write_latent_file(out_dir / FILE_Y, rows_y, tag_y)
    manifest = PairManifest(
        path_x=FILE_X,
        path_y=FILE_Y,
        count=rows_x.shape[0],
        checksum_x=file_checksum(out_dir / FILE_X),
        checksum_y=file_checksum(out_dir / FILE_Y),
    )
    (out_dir / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def _open_latent_file(path: Path, expect_checksum: str):
    if not path.exists():
        raise StoreError(f"latent file missing: {path}")
    size = path.stat().st_size
    if size < HEADER_SIZE:
        raise StoreError(f"truncated latent file (no header): {path}")
    with open(path, "rb") as f:
        magic, version, dim, count, tag_raw = HEADER.unpack(f.read(HEADER_SIZE))
    if magic != MAGIC:
        raise StoreError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise StoreError(f"version mismatch: file has {version}, expected {VERSION}")
    expected_size = HEADER_SIZE + 4 * count * dim
    if size != expected_size:
        kind = "truncated" if size < expected_size else "oversized"
        raise StoreError(f"{kind} latent file: {path} has {size} bytes, expected {expected_size}")
    if file_checksum(path) != expect_checksum:
        raise StoreError(f"checksum mismatch for {path}")
    data = np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(count, dim))
    if not np.all(np.isfinite(data)):
        raise StoreError(f"non-finite values in {path}")
    tag = tag_raw.rstrip(b"\x00").decode("ascii")
    return data, tag


class StoreHandle:
    """Validated read access to an index-aligned pair of latent files.

    Reading is safe from multiple threads once opened; the underlying arrays
    are read-only memory maps.
    """

    def __init__(self, manifest_path):
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise StoreError(f"manifest not found: {manifest_path}")
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        try:
            self.manifest = PairManifest(
                path_x=raw["path_x"],
                path_y=raw["path_y"],
                count=int(raw["count"]),
                checksum_x=raw["checksum_x"],
                checksum_y=raw["checksum_y"],
            )
        except KeyError as exc:
            raise StoreError(f"manifest missing field {exc}") from exc
        base = manifest_path.parent
        self.manifest_path = manifest_path
        self._x, self.tag_x = _open_latent_file(base / self.manifest.path_x, self.manifest.checksum_x)
        self._y, self.tag_y = _open_latent_file(base / self.manifest.path_y, self.manifest.checksum_y)
        if self._x.shape[0] != self._y.shape[0]:
            raise StoreError(
                f"count mismatch between files: {self._x.shape[0]} vs {self._y.shape[0]}"
            )
        if self.manifest.count != self._x.shape[0]:
            raise StoreError(
                f"count mismatch: manifest says {self.manifest.count}, "
                f"files hold {self._x.shape[0]}"
            )

    @property
    def count(self) -> int:
        return self._x.shape[0]

    @property
    def dim_x(self) -> int:
        return self._x.shape[1]

    @property
    def dim_y(self) -> int:
        return self._y.shape[1]

    def rows(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Copy out the given rows of both modalities, index-aligned."""
        idx = np.asarray(indices)
        return np.array(self._x[idx], dtype=np.float32), np.array(self._y[idx], dtype=np.float32)

    def read_all(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._x, dtype=np.float32), np.array(self._y, dtype=np.float32)


def open_store(manifest_path) -> StoreHandle:
    """Open and fully validate a latent store via its manifest."""
    return StoreHandle(manifest_path)


def epoch_batches(handle: StoreHandle, batch_rows: int, seed) -> Iterator[Batch]:
    """Yield one epoch of batches from a seed-determined permutation.

    Produces ``floor(count / batch_rows)`` batches without replacement; the
    trailing partial batch is dropped so every batch has exactly
    ``batch_rows`` rows.  The same seed reproduces the same batch sequence.
    """
    if batch_rows > handle.count:
        raise StoreError(
            f"batch of {batch_rows} rows exceeds store count {handle.count}"
        )
    if batch_rows < 2 or batch_rows % 2 != 0:
        raise StoreError("batch_rows must be a positive even number")
    perm = np.random.default_rng(seed).permutation(handle.count)
    n_batches = handle.count // batch_rows
    for b in range(n_batches):
        idx = perm[b * batch_rows : (b + 1) * batch_rows]
        z_x, z_y = handle.rows(idx)
        yield Batch(z_x=z_x, z_y=z_y, indices=idx.copy())


def synth_aligned(n: int, dim_x: int, dim_y: int, dim_latent: int,
                  noise_sigma: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Generate index-aligned latent pairs that share semantics by construction.

    Latent codes ``c_i`` are standard normal in ``dim_latent`` dimensions and
    are pushed through two fixed orthonormal-column maps::

        x_i = U_x c_i          y_i = U_y c_i + noise

    With zero noise, ``y_i = U_y U_x^T x_i`` exactly, so a linear map aligns
    the modalities; the generator is the desk-scale stand-in for a pair of
    frozen encoders viewing the same underlying content.
    """
    if dim_latent > min(dim_x, dim_y):
        raise StoreError("dim_latent must not exceed either output dimension")
    if dim_latent < 1 or n < 1:
        raise StoreError("n and dim_latent must be positive")
    if noise_sigma < 0:
        raise StoreError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    u_x, _ = np.linalg.qr(rng.normal(size=(dim_x, dim_latent)))
    u_y, _ = np.linalg.qr(rng.normal(size=(dim_y, dim_latent)))
    codes = rng.normal(size=(n, dim_latent))
    rows_x = codes @ u_x.T
    rows_y = codes @ u_y.T
    if noise_sigma > 0:
        rows_y = rows_y + rng.normal(scale=noise_sigma, size=rows_y.shape)
    return rows_x.astype(np.float32), rows_y.astype(np.float32)
