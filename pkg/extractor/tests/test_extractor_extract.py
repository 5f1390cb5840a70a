"""Extraction passes: ordering, determinism, skips, and pairing."""

import json
import logging

import numpy as np
import numpy.testing as npt
import pytest

from latentextract import (EncoderError, ExtractError, ExtractSpec,
                           build_encoder, extract, pair_and_manifest)
from latentextract import format as fmt

TEXT_ENC = "builtin:token-hash-24"
FILE_ENC = "builtin:bytes-hash-16"

CAPTIONS = ["a dog on a couch", "two cyclists racing", "a dog on a chair",
            "rainy street at night", "sunlit field of wheat"]


def make_files(tmp_path, n, subdir="blobs"):
    root = tmp_path / subdir
    root.mkdir()
    paths = []
    for i in range(n):
        p = root / f"item{i:03d}.bin"
        p.write_bytes(f"payload-{i}".encode() * (i + 1))
        paths.append(str(p))
    return paths


class TestEncoders:
    def test_identical_items_identical_rows(self):
        enc = build_encoder(TEXT_ENC, "text")
        rows = enc.encode_batch(["same text", "other", "same text"], "cls")
        npt.assert_array_equal(rows[0], rows[2])
        assert not np.array_equal(rows[0], rows[1])

    def test_mean_pooling_averages_tokens(self):
        enc = build_encoder(TEXT_ENC, "text")
        single = enc.encode_batch(["alpha", "beta"], "mean")
        both = enc.encode_batch(["alpha beta"], "mean")
        npt.assert_allclose(both[0], (single[0] + single[1]) / 2, atol=1e-6)

    def test_cls_and_mean_pooling_differ(self):
        enc = build_encoder(TEXT_ENC, "text")
        text = ["a dog on a couch"]
        assert not np.array_equal(enc.encode_batch(text, "cls"),
                                  enc.encode_batch(text, "mean"))

    def test_concatenation_doubles_dim(self):
        enc = build_encoder(f"{FILE_ENC}+{FILE_ENC}", "audio")
        assert enc.dim == 32
        rows = enc.encode_batch([b"wave-bytes"], "mean")
        assert rows.shape == (1, 32)
        # twin encoders see the same content, so the halves agree
        npt.assert_array_equal(rows[0, :16], rows[0, 16:])

    def test_concatenation_of_distinct_encoders(self):
        enc = build_encoder("builtin:bytes-hash-16+builtin:bytes-hash-8",
                            "audio")
        assert enc.dim == 24

    @pytest.mark.parametrize("encoder_id, modality", [
        ("builtin:bytes-hash-16", "text"),   # file encoder for literal refs
        ("builtin:token-hash-16", "image"),  # text encoder for file refs
        ("builtin:nosuch-16", "text"),
        ("builtin:token-hash-x", "text"),
        ("+builtin:bytes-hash-16", "audio"),
    ])
    def test_bad_encoder_modality_combos(self, encoder_id, modality):
        with pytest.raises(EncoderError):
            build_encoder(encoder_id, modality)

    def test_hub_audio_is_not_supported(self):
        with pytest.raises(EncoderError, match="builtin"):
            build_encoder("some/audio-model", "audio")


class TestExtract:
    def test_rows_follow_listing_order(self, tmp_path):
        spec = ExtractSpec(encoder=TEXT_ENC, modality="text", pooling="cls",
                           batch_size=2, out_dir=str(tmp_path))
        result = extract(spec, CAPTIONS, "latents_y.fxl")
        assert (result.count, result.dim, result.skipped) == (5, 24, ())
        rows, tag = fmt.read_latent_file(result.path)
        enc = build_encoder(TEXT_ENC, "text")
        for i, caption in enumerate(CAPTIONS):
            npt.assert_array_equal(rows[i], enc.encode_batch([caption], "cls")[0])
        assert tag == fmt.encoder_tag(TEXT_ENC)

    def test_batch_size_does_not_change_output(self, tmp_path):
        outputs = []
        for bs in (1, 3, 64):
            spec = ExtractSpec(encoder=TEXT_ENC, modality="text",
                               batch_size=bs, out_dir=str(tmp_path / str(bs)))
            result = extract(spec, CAPTIONS, "latents_y.fxl")
            outputs.append(fmt.read_latent_file(result.path)[0])
        npt.assert_array_equal(outputs[0], outputs[1])
        npt.assert_array_equal(outputs[0], outputs[2])

    def test_unreadable_input_skipped_and_logged(self, tmp_path, caplog):
        paths = make_files(tmp_path, 4)
        paths.insert(2, str(tmp_path / "blobs" / "missing.bin"))
        spec = ExtractSpec(encoder=FILE_ENC, modality="image",
                           out_dir=str(tmp_path))
        with caplog.at_level(logging.WARNING, logger="latentextract"):
            result = extract(spec, paths, "latents_x.fxl")
        assert result.skipped == (2,)
        assert result.count == 4
        assert any("skipping unreadable input 2" in r.getMessage()
                   for r in caplog.records)

    def test_all_unreadable_is_an_error(self, tmp_path):
        spec = ExtractSpec(encoder=FILE_ENC, modality="image",
                           out_dir=str(tmp_path))
        with pytest.raises(ExtractError, match="unreadable"):
            extract(spec, [str(tmp_path / "nope.bin")], "latents_x.fxl")

    def test_empty_refs_is_an_error(self, tmp_path):
        spec = ExtractSpec(encoder=TEXT_ENC, modality="text",
                           out_dir=str(tmp_path))
        with pytest.raises(ExtractError, match="no input"):
            extract(spec, [], "latents_y.fxl")

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="modality"):
            ExtractSpec(encoder=TEXT_ENC, modality="video")
        with pytest.raises(ValueError, match="pooling"):
            ExtractSpec(encoder=TEXT_ENC, modality="text", pooling="max")
        with pytest.raises(ValueError, match="batch_size"):
            ExtractSpec(encoder=TEXT_ENC, modality="text", batch_size=0)


class TestPairAndManifest:
    def run_passes(self, tmp_path, drop_index=None):
        paths = make_files(tmp_path, 6)
        captions = [f"caption number {i}" for i in range(6)]
        if drop_index is not None:
            paths[drop_index] = str(tmp_path / "blobs" / "gone.bin")
        spec_x = ExtractSpec(encoder=FILE_ENC, modality="image",
                             out_dir=str(tmp_path / "work"))
        spec_y = ExtractSpec(encoder=TEXT_ENC, modality="text",
                             out_dir=str(tmp_path / "work"))
        rx = extract(spec_x, paths, fmt.FILE_X)
        ry = extract(spec_y, captions, fmt.FILE_Y)
        return rx, ry, captions

    def test_no_skips_full_count(self, tmp_path):
        rx, ry, _ = self.run_passes(tmp_path)
        manifest = pair_and_manifest(rx, ry, tmp_path / "store")
        assert manifest["count"] == 6
        assert manifest["skipped_indices"] == []
        on_disk = json.loads((tmp_path / "store" / fmt.MANIFEST).read_text())
        assert on_disk == manifest

    def test_one_skip_drops_companion_row(self, tmp_path):
        rx, ry, captions = self.run_passes(tmp_path, drop_index=2)
        manifest = pair_and_manifest(rx, ry, tmp_path / "store")
        assert manifest["count"] == 5
        assert manifest["skipped_indices"] == [2]
        rows_y, _ = fmt.read_latent_file(tmp_path / "store" / fmt.FILE_Y)
        enc = build_encoder(TEXT_ENC, "text")
        survivors = [c for i, c in enumerate(captions) if i != 2]
        npt.assert_array_equal(rows_y, enc.encode_batch(survivors, "cls"))
        rows_x, _ = fmt.read_latent_file(tmp_path / "store" / fmt.FILE_X)
        assert rows_x.shape == (5, 16)

    def test_irreconcilable_counts_rejected(self, tmp_path):
        rx, _, _ = self.run_passes(tmp_path)
        spec_y = ExtractSpec(encoder=TEXT_ENC, modality="text",
                             out_dir=str(tmp_path / "short"))
        ry_short = extract(spec_y, ["only", "three", "captions"], fmt.FILE_Y)
        with pytest.raises(ExtractError, match="irreconcilable"):
            pair_and_manifest(rx, ry_short, tmp_path / "store")

    def test_checksums_match_final_files(self, tmp_path):
        rx, ry, _ = self.run_passes(tmp_path, drop_index=4)
        manifest = pair_and_manifest(rx, ry, tmp_path / "store")
        store = tmp_path / "store"
        assert manifest["checksum_x"] == fmt.file_checksum(store / fmt.FILE_X)
        assert manifest["checksum_y"] == fmt.file_checksum(store / fmt.FILE_Y)
