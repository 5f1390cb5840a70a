"""Tests for the paired latent store: format, validation, batching, synth data."""

import json
import struct

import numpy as np
import pytest

from fusealign import store
from fusealign.store import (
    Batch,
    StoreError,
    epoch_batches,
    file_checksum,
    open_store,
    synth_aligned,
    write_store,
)


def make_store(tmp_path, n=20, dx=5, dy=3, seed=0, tags=("image", "text")):
    rng = np.random.default_rng(seed)
    rows_x = rng.normal(size=(n, dx)).astype(np.float32)
    rows_y = rng.normal(size=(n, dy)).astype(np.float32)
    write_store(rows_x, rows_y, tags, tmp_path)
    return rows_x, rows_y


class TestFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rows_x, rows_y = make_store(tmp_path)
        handle = open_store(tmp_path / "manifest.json")
        got_x, got_y = handle.read_all()
        assert got_x.tobytes() == rows_x.tobytes()
        assert got_y.tobytes() == rows_y.tobytes()
        assert handle.count == 20
        assert handle.dim_x == 5
        assert handle.dim_y == 3
        assert handle.tag_x == "image"
        assert handle.tag_y == "text"

    def test_header_layout_by_hand(self, tmp_path):
        """Check byte offsets directly rather than through the reader."""
        rows_x, _ = make_store(tmp_path, n=7, dx=4)
        raw = (tmp_path / "latents_x.fxl").read_bytes()
        assert raw[0:4] == b"FXLS"
        assert struct.unpack("<I", raw[4:8])[0] == 1       # version
        assert struct.unpack("<I", raw[8:12])[0] == 4      # dim
        assert struct.unpack("<Q", raw[12:20])[0] == 7     # count
        assert raw[20:36] == b"image".ljust(16, b"\x00")   # tag
        assert len(raw) == 36 + 4 * 7 * 4
        body = np.frombuffer(raw[36:], dtype="<f4").reshape(7, 4)
        np.testing.assert_array_equal(body, rows_x)

    def test_manifest_fields(self, tmp_path):
        make_store(tmp_path)
        raw = json.loads((tmp_path / "manifest.json").read_text())
        assert set(raw) == {"path_x", "path_y", "count", "checksum_x", "checksum_y"}
        assert raw["count"] == 20
        assert raw["checksum_x"] == file_checksum(tmp_path / "latents_x.fxl")
        assert len(raw["checksum_x"]) == 16  # 8-byte digest, hex

    def test_checksum_differs_across_content(self, tmp_path):
        make_store(tmp_path / "a", seed=1)
        make_store(tmp_path / "b", seed=2)
        ca = file_checksum(tmp_path / "a" / "latents_x.fxl")
        cb = file_checksum(tmp_path / "b" / "latents_x.fxl")
        assert ca != cb

    def test_writer_casts_float64(self, tmp_path):
        rows = np.random.default_rng(0).normal(size=(4, 3))
        write_store(rows, rows, ("a", "b"), tmp_path)
        handle = open_store(tmp_path / "manifest.json")
        got_x, _ = handle.read_all()
        assert got_x.dtype == np.float32
        np.testing.assert_array_equal(got_x, rows.astype(np.float32))


class TestValidation:
    def test_empty_store_rejected(self, tmp_path):
        empty = np.zeros((0, 3), dtype=np.float32)
        with pytest.raises(StoreError, match="empty"):
            write_store(empty, empty, ("a", "b"), tmp_path)

    def test_mismatched_counts_rejected_on_write(self, tmp_path):
        x = np.zeros((3, 2), dtype=np.float32)
        y = np.zeros((4, 2), dtype=np.float32)
        with pytest.raises(StoreError, match="mismatched row counts"):
            write_store(x, y, ("a", "b"), tmp_path)

    def test_non_finite_rejected(self, tmp_path):
        x = np.zeros((3, 2), dtype=np.float32)
        y = x.copy()
        y[1, 0] = np.nan
        with pytest.raises(StoreError, match="non-finite"):
            write_store(x, y, ("a", "b"), tmp_path)

    def test_truncated_file(self, tmp_path):
        make_store(tmp_path)
        p = tmp_path / "latents_y.fxl"
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(StoreError, match="truncated"):
            open_store(tmp_path / "manifest.json")

    def test_corrupted_body_fails_checksum(self, tmp_path):
        make_store(tmp_path)
        p = tmp_path / "latents_x.fxl"
        raw = bytearray(p.read_bytes())
        raw[40] ^= 0xFF  # flip bits inside the first row
        p.write_bytes(bytes(raw))
        with pytest.raises(StoreError, match="checksum mismatch"):
            open_store(tmp_path / "manifest.json")

    def test_bad_magic(self, tmp_path):
        make_store(tmp_path)
        p = tmp_path / "latents_x.fxl"
        raw = bytearray(p.read_bytes())
        raw[0:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        # refresh manifest checksum so the magic check is what fires
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["checksum_x"] = file_checksum(p)
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(StoreError, match="bad magic"):
            open_store(tmp_path / "manifest.json")

    def test_manifest_count_mismatch(self, tmp_path):
        make_store(tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["count"] = 19
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(StoreError, match="count mismatch"):
            open_store(tmp_path / "manifest.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(StoreError, match="manifest not found"):
            open_store(tmp_path / "manifest.json")

    def test_missing_manifest_field(self, tmp_path):
        make_store(tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        del m["checksum_y"]
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(StoreError, match="missing field"):
            open_store(tmp_path / "manifest.json")

    def test_long_tag_rejected(self, tmp_path):
        x = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(StoreError, match="longer than 16"):
            write_store(x, x, ("a" * 17, "b"), tmp_path)

    def test_odd_batch_rejected(self, tmp_path):
        make_store(tmp_path)
        handle = open_store(tmp_path / "manifest.json")
        with pytest.raises(StoreError, match="even"):
            next(epoch_batches(handle, 3, seed=0))

    def test_oversized_batch_rejected(self, tmp_path):
        make_store(tmp_path, n=10)
        handle = open_store(tmp_path / "manifest.json")
        with pytest.raises(StoreError, match="exceeds store count"):
            next(epoch_batches(handle, 12, seed=0))


class TestBatching:
    def test_epoch_covers_without_replacement(self, tmp_path):
        make_store(tmp_path, n=23)
        handle = open_store(tmp_path / "manifest.json")
        batches = list(epoch_batches(handle, 4, seed=7))
        assert len(batches) == 23 // 4  # trailing partial dropped
        seen = np.concatenate([b.indices for b in batches])
        assert len(seen) == len(set(seen.tolist()))  # no repeats

    def test_batches_are_index_aligned(self, tmp_path):
        rows_x, rows_y = make_store(tmp_path, n=16)
        handle = open_store(tmp_path / "manifest.json")
        for batch in epoch_batches(handle, 4, seed=3):
            np.testing.assert_array_equal(batch.z_x, rows_x[batch.indices])
            np.testing.assert_array_equal(batch.z_y, rows_y[batch.indices])

    def test_same_seed_same_batches(self, tmp_path):
        make_store(tmp_path, n=32)
        handle = open_store(tmp_path / "manifest.json")
        a = [b.indices for b in epoch_batches(handle, 8, seed=11)]
        b = [b.indices for b in epoch_batches(handle, 8, seed=11)]
        for ia, ib in zip(a, b):
            np.testing.assert_array_equal(ia, ib)

    def test_different_seed_shuffles(self, tmp_path):
        make_store(tmp_path, n=64)
        handle = open_store(tmp_path / "manifest.json")
        a = np.concatenate([b.indices for b in epoch_batches(handle, 8, seed=1)])
        b = np.concatenate([b.indices for b in epoch_batches(handle, 8, seed=2)])
        assert not np.array_equal(a, b)

    def test_batch_row_mismatch_rejected(self):
        with pytest.raises(StoreError, match="row counts differ"):
            Batch(
                z_x=np.zeros((4, 2), dtype=np.float32),
                z_y=np.zeros((2, 2), dtype=np.float32),
                indices=np.arange(4),
            )


class TestSynthAligned:
    def test_shapes_and_dtype(self):
        x, y = synth_aligned(10, dim_x=6, dim_y=4, dim_latent=3,
                             noise_sigma=0.0, seed=0)
        assert x.shape == (10, 6) and y.shape == (10, 4)
        assert x.dtype == np.float32 and y.dtype == np.float32

    def test_deterministic(self):
        a = synth_aligned(8, 5, 4, 2, 0.01, seed=42)
        b = synth_aligned(8, 5, 4, 2, 0.01, seed=42)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_noiseless_pairs_linearly_related(self):
        """With zero noise an exact linear map sends x rows to y rows."""
        x, y = synth_aligned(200, 16, 12, 5, noise_sigma=0.0, seed=3)
        x64 = x.astype(np.float64)
        m, *_ = np.linalg.lstsq(x64, y.astype(np.float64), rcond=None)
        np.testing.assert_allclose(x64 @ m, y, atol=1e-4)

    def test_linear_probe_retrieves_heldout(self):
        """A ridge map fit on one split nails nearest-neighbour retrieval on
        another -- the signal the end-to-end training run is meant to find."""
        x, y = synth_aligned(2000, 64, 48, 8, noise_sigma=0.01, seed=9)
        xt, yt = x[:1500].astype(np.float64), y[:1500].astype(np.float64)
        xh, yh = x[1500:].astype(np.float64), y[1500:].astype(np.float64)
        m = np.linalg.solve(xt.T @ xt + 1e-3 * np.eye(64), xt.T @ yt)
        pred = xh @ m
        pn = pred / np.linalg.norm(pred, axis=1, keepdims=True)
        yn = yh / np.linalg.norm(yh, axis=1, keepdims=True)
        hits = (pn @ yn.T).argmax(axis=1) == np.arange(len(xh))
        assert hits.mean() > 0.95

    def test_invalid_args(self):
        with pytest.raises(StoreError):
            synth_aligned(10, 4, 4, 5, 0.0, seed=0)  # latent dim too big
        with pytest.raises(StoreError):
            synth_aligned(0, 4, 4, 2, 0.0, seed=0)
        with pytest.raises(StoreError):
            synth_aligned(10, 4, 4, 2, -0.1, seed=0)
