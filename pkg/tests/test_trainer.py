"""Tests for the training loop: determinism, checkpoints, resume, metrics."""

import json
import math

import numpy as np
import pytest

from fusealign import trainer as tr
from fusealign.adapter import AdapterConfig, init_params
from fusealign.augment import MixConfig
from fusealign.objective import LossConfig, LossReport, step_loss
from fusealign.store import open_store, synth_aligned, write_store
from fusealign.trainer import (
    Checkpoint,
    TrainConfig,
    TrainError,
    config_from_dict,
    config_json,
    config_to_dict,
    load_checkpoint,
    preset,
    resume,
    save_checkpoint,
    train,
)


def make_store(tmp_path, n=64, dx=8, dy=6, noise=0.0, seed=0, latent=4,
               name="store"):
    rows_x, rows_y = synth_aligned(n, dx, dy, latent, noise, seed)
    out = tmp_path / name
    write_store(rows_x, rows_y, ("x", "y"), out)
    return open_store(out / "manifest.json")


def small_config(**kw):
    base = dict(
        batch_b=4, epochs=2, seed=11,
        adapter_x=AdapterConfig(input_dim=8, shared_dim=4, depth=1, dropout_p=0.1),
        adapter_y=AdapterConfig(input_dim=6, shared_dim=4, depth=1, dropout_p=0.1),
        lr=1e-3, weight_decay=0.1,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_round_trip(self):
        cfg = small_config(augment=MixConfig(alpha=2.0, scheme="gaussian"),
                           loss=LossConfig(init_logit_scale=5.0),
                           warmup_steps=3, checkpoint_every=2)
        back = config_from_dict(config_to_dict(cfg))
        assert back == cfg

    def test_json_is_canonical(self):
        cfg = small_config()
        assert config_json(cfg) == config_json(small_config())
        assert '"train"' in config_json(cfg)

    def test_validation(self):
        with pytest.raises(ValueError, match="batch_b"):
            small_config(batch_b=1)
        with pytest.raises(ValueError, match="epochs"):
            small_config(epochs=0)
        with pytest.raises(ValueError, match="shared"):
            small_config(adapter_y=AdapterConfig(input_dim=6, shared_dim=5, depth=1))

    def test_presets(self):
        it = preset("image_text", 768, 512)
        assert (it.batch_b, it.epochs) == (20_000, 500)
        assert (it.lr, it.weight_decay) == (1e-3, 0.1)
        assert it.adapter_x.depth == 4 and it.adapter_x.shared_dim == 512
        at = preset("audio_text", 128, 512)
        assert (at.batch_b, at.epochs) == (2_000, 50)
        assert (at.lr, at.weight_decay) == (1e-4, 0.5)
        assert at.adapter_y.depth == 2
        with pytest.raises(ValueError):
            preset("video_text", 8, 8)


class TestTrainLoop:
    def test_loss_decreases(self, tmp_path):
        store = make_store(tmp_path, n=400, dx=8, dy=6, noise=0.0)
        cfg = small_config(batch_b=100, epochs=3, lr=1e-2, warmup_steps=0,
                           adapter_x=AdapterConfig(input_dim=8, shared_dim=4,
                                                   depth=1, dropout_p=0.0),
                           adapter_y=AdapterConfig(input_dim=6, shared_dim=4,
                                                   depth=1, dropout_p=0.0))
        metrics = tmp_path / "metrics.ndjson"
        ckpt = train(store, cfg, metrics_path=metrics)
        records = [json.loads(line) for line in metrics.read_text().splitlines()]
        first_step_loss = records[0]["loss"]
        assert ckpt.epoch_losses[-1] < first_step_loss

    def test_step_zero_loss_near_log_b(self, tmp_path):
        rng = np.random.default_rng(0)
        out = tmp_path / "rand"
        write_store(rng.normal(size=(520, 48)).astype(np.float32),
                    rng.normal(size=(520, 32)).astype(np.float32),
                    ("x", "y"), out)
        store = open_store(out / "manifest.json")
        cfg = small_config(
            batch_b=256, epochs=1, seed=3,
            adapter_x=AdapterConfig(input_dim=48, shared_dim=64, depth=1,
                                    dropout_p=0.0),
            adapter_y=AdapterConfig(input_dim=32, shared_dim=64, depth=1,
                                    dropout_p=0.0),
            loss=LossConfig(init_logit_scale=1.0))
        ckpt = train(store, cfg)
        # single step per epoch, so the epoch mean is the step-0 loss
        assert abs(ckpt.epoch_losses[0] - math.log(256)) < 0.05 * math.log(256)

    def test_counters_and_history(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=3)  # 8 steps/epoch at 2B=8
        ckpt = train(store, cfg)
        assert ckpt.epoch == 3
        assert ckpt.step == 3 * (64 // 8)
        assert ckpt.opt_state.step == ckpt.step
        assert len(ckpt.epoch_losses) == 3
        assert all(math.isfinite(l) for l in ckpt.epoch_losses)

    def test_smoke_run_stays_finite(self, tmp_path):
        store = make_store(tmp_path, n=96, noise=0.01)
        cfg = small_config(epochs=10, lr=5e-3)
        ckpt = train(store, cfg)
        for p in (*ckpt.params_x.values(), *ckpt.params_y.values()):
            assert np.all(np.isfinite(p))
        for mom in (*ckpt.opt_state.m.values(), *ckpt.opt_state.v.values()):
            assert np.all(np.isfinite(mom))
        assert math.isfinite(float(ckpt.log_t))

    def test_logit_scale_stays_clamped(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=2, lr=0.5,
                           loss=LossConfig(init_logit_scale=99.0,
                                           max_logit_scale=100.0))
        ckpt = train(store, cfg)
        assert math.exp(float(ckpt.log_t)) <= 100.0 + 1e-9

    def test_fixed_temperature_untouched(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(loss=LossConfig(learnable_t=False))
        ckpt = train(store, cfg)
        assert math.exp(float(ckpt.log_t)) == pytest.approx(1 / 0.07)

    def test_scheme_none_matches_manual_step(self, tmp_path):
        """First trainer step under scheme=none equals a hand-built plain
        contrastive step on the first B rows of the shuffled 2B batch."""
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=1, augment=MixConfig(scheme="none"))
        metrics = tmp_path / "m.ndjson"
        train(store, cfg, metrics_path=metrics)
        first = json.loads(metrics.read_text().splitlines()[0])

        perm = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 1, 0))).permutation(store.count)
        z_x, z_y = store.rows(perm[: 2 * cfg.batch_b])
        px = init_params(cfg.adapter_x, np.random.SeedSequence((cfg.seed, 0, 0)))
        py = init_params(cfg.adapter_y, np.random.SeedSequence((cfg.seed, 0, 1)))
        report, *_ = step_loss(
            px, cfg.adapter_x, py, cfg.adapter_y,
            math.log(cfg.loss.init_logit_scale),
            z_x[: cfg.batch_b], z_y[: cfg.batch_b], mode="train",
            rng=np.random.default_rng(np.random.SeedSequence((cfg.seed, 3, 0, 0))))
        assert first["loss"] == pytest.approx(report.loss, abs=1e-12)
        assert first["lam"] is None

    def test_batch_too_large_rejected_before_training(self, tmp_path):
        store = make_store(tmp_path, n=64)
        with pytest.raises(TrainError, match="store holds only"):
            train(store, small_config(batch_b=64))

    def test_store_dim_mismatch_rejected(self, tmp_path):
        store = make_store(tmp_path, n=64, dx=10)
        with pytest.raises(TrainError, match="does not match adapter"):
            train(store, small_config())

    def test_nonfinite_loss_aborts_with_location(self, tmp_path, monkeypatch):
        store = make_store(tmp_path, n=64)

        def poisoned(*args, **kwargs):
            report = LossReport(loss=float("nan"), loss_xy=0.0, loss_yx=0.0,
                                logit_scale=1.0, batch_b=4)
            return report, {}, {}, 0.0

        monkeypatch.setattr(tr, "step_loss", poisoned)
        with pytest.raises(TrainError, match="epoch 0 step 0"):
            train(store, small_config())


class TestMetrics:
    def test_step_records(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=2)
        metrics = tmp_path / "metrics.ndjson"
        train(store, cfg, metrics_path=metrics)
        records = [json.loads(line) for line in metrics.read_text().splitlines()]
        steps = [r for r in records if r["kind"] == "step"]
        assert len(steps) == 2 * (64 // 8)
        for r in steps:
            assert set(r) == {"kind", "epoch", "step", "loss", "loss_xy",
                              "loss_yx", "logit_scale", "lr", "lam"}
            assert 0.0 < r["lam"] < 1.0  # fusemix default
        assert [r["step"] for r in steps] == list(range(len(steps)))

    def test_eval_records_on_heldout(self, tmp_path):
        store = make_store(tmp_path, n=64)
        held = make_store(tmp_path, n=20, seed=5, name="held")
        cfg = small_config(epochs=4, eval_every=2)
        metrics = tmp_path / "metrics.ndjson"
        train(store, cfg, heldout=held, metrics_path=metrics)
        records = [json.loads(line) for line in metrics.read_text().splitlines()]
        evals = [r for r in records if r["kind"] == "eval"]
        assert [r["epoch"] for r in evals] == [2, 4]
        for r in evals:
            for key in ("x_to_y_r1", "x_to_y_r5", "x_to_y_r10",
                        "y_to_x_r1", "y_to_x_r5", "y_to_x_r10"):
                assert 0.0 <= r[key] <= 1.0


class TestCheckpointFile:
    def test_round_trip(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=2)
        ckpt = train(store, cfg)
        path = tmp_path / "ck.fxck"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.config == cfg
        assert loaded.epoch == ckpt.epoch
        assert loaded.step == ckpt.step
        assert loaded.opt_state.step == ckpt.opt_state.step
        assert float(loaded.log_t) == float(ckpt.log_t)
        assert loaded.epoch_losses == ckpt.epoch_losses
        for name in ckpt.params_x:
            np.testing.assert_array_equal(loaded.params_x[name],
                                          ckpt.params_x[name])
        for name in ckpt.opt_state.m:
            np.testing.assert_array_equal(loaded.opt_state.m[name],
                                          ckpt.opt_state.m[name])
            np.testing.assert_array_equal(loaded.opt_state.v[name],
                                          ckpt.opt_state.v[name])

    def test_corruption_detected(self, tmp_path):
        store = make_store(tmp_path, n=64)
        ckpt = train(store, small_config())
        path = tmp_path / "ck.fxck"
        save_checkpoint(ckpt, path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(TrainError, match="digest mismatch"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        store = make_store(tmp_path, n=64)
        ckpt = train(store, small_config())
        path = tmp_path / "ck.fxck"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(TrainError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.fxck"
        body = b"JUNK" + b"\x00" * 32
        import hashlib
        path.write_bytes(body + hashlib.blake2b(body, digest_size=8).digest())
        with pytest.raises(TrainError, match="not a checkpoint"):
            load_checkpoint(path)


class TestDeterminismAndResume:
    def test_two_runs_bit_identical(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=2)
        a = tmp_path / "a.fxck"
        b = tmp_path / "b.fxck"
        save_checkpoint(train(store, cfg), a)
        save_checkpoint(train(store, cfg), b)
        assert a.read_bytes() == b.read_bytes()

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        store = make_store(tmp_path, n=64)
        cfg = small_config(epochs=4, checkpoint_every=2)
        dir_a = tmp_path / "run_a"
        dir_a.mkdir()
        train(store, cfg, checkpoint_dir=dir_a)
        final_a = (dir_a / "checkpoint_final.fxck").read_bytes()

        mid = load_checkpoint(dir_a / "checkpoint_epoch00002.fxck")
        assert mid.epoch == 2
        dir_b = tmp_path / "run_b"
        dir_b.mkdir()
        resume(mid, store, checkpoint_dir=dir_b)
        final_b = (dir_b / "checkpoint_final.fxck").read_bytes()
        assert final_a == final_b

    def test_resume_at_end_is_noop(self, tmp_path):
        store = make_store(tmp_path, n=64)
        ckpt = train(store, small_config(epochs=2))
        before = {k: v.copy() for k, v in ckpt.params_x.items()}
        again = resume(ckpt, store)
        assert again is ckpt
        for name, v in before.items():
            np.testing.assert_array_equal(again.params_x[name], v)

    def test_resume_rejects_wrong_store(self, tmp_path):
        store = make_store(tmp_path, n=64)
        ckpt = train(store, small_config(epochs=1))
        other = make_store(tmp_path, n=64, dx=12, name="other")
        with pytest.raises(TrainError, match="does not match adapter"):
            resume(ckpt, other)

    def test_seed_changes_trajectory(self, tmp_path):
        store = make_store(tmp_path, n=64)
        a = train(store, small_config(epochs=1, seed=1))
        b = train(store, small_config(epochs=1, seed=2))
        assert not np.array_equal(a.params_x["proj.w"], b.params_x["proj.w"])
