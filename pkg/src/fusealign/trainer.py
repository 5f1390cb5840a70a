"""End-to-end alignment training over a paired latent store.

Each optimizer step draws 2B paired rows, folds them to B pairs with the
configured augmentation (convex mixing by default), pushes both sides through
their adapters in train mode, normalizes, computes the symmetric contrastive
loss, and applies one AdamW update with the warmup/cosine schedule.

Randomness is split into purpose-keyed streams derived from
``SeedSequence((seed, purpose, epoch, step))`` -- one purpose for parameter
init, one for the epoch shuffle, one for the mixing draw, one for dropout.
Because no stream depends on execution history, training for N epochs and
training for M epochs followed by a resume for N-M are bit-identical, and two
runs with the same seed produce byte-identical checkpoints.

Checkpoints are single binary files: magic ``FXCK``, version, a JSON config
snapshot, counters, the log-temperature, both flat parameter blocks (32-bit),
the optimizer moments (64-bit), the per-epoch loss history, and a trailing
content digest.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adapter as ad
from . import retrieval
from .augment import MixConfig, apply_scheme
from .objective import LossConfig, clamp_log_t, init_log_t, step_loss
from .optim import OptimConfig, OptimState, apply_step, init_state, lr_at
from .store import StoreHandle, epoch_batches

CKPT_MAGIC = b"FXCK"
CKPT_VERSION = 1

# purpose codes for seed-stream derivation
_INIT, _SHUFFLE, _MIX, _DROPOUT = 0, 1, 2, 3


class TrainError(RuntimeError):
    """Raised when training cannot proceed (bad config, non-finite loss...)."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; serializable to a plain nested dict."""

    batch_b: int
    epochs: int
    seed: int
    adapter_x: ad.AdapterConfig
    adapter_y: ad.AdapterConfig
    augment: MixConfig = field(default_factory=MixConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_start_lr: float = 1e-6
    final_lr: float = 0.0
    warmup_steps: int | None = None  # None -> one epoch of steps
    checkpoint_every: int = 0  # epochs between snapshots; 0 = final only
    eval_every: int = 0  # epochs between held-out evals; 0 = never

    def __post_init__(self):
        if self.batch_b < 2:
            raise ValueError("batch_b must be at least 2")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.adapter_x.shared_dim != self.adapter_y.shared_dim:
            raise ValueError("adapters must target the same shared dimension")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ValueError("checkpoint_every and eval_every must be >= 0")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")


@dataclass
class Checkpoint:
    """Complete training state; sufficient to resume bit-exactly."""

    config: TrainConfig
    params_x: dict[str, np.ndarray]
    params_y: dict[str, np.ndarray]
    log_t: np.ndarray
    opt_state: OptimState
    epoch: int
    step: int
    epoch_losses: list[float]


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "train": {
            "batch_b": config.batch_b,
            "epochs": config.epochs,
            "seed": config.seed,
            "checkpoint_every": config.checkpoint_every,
            "eval_every": config.eval_every,
        },
        "adapter_x": asdict(config.adapter_x),
        "adapter_y": asdict(config.adapter_y),
        "augment": asdict(config.augment),
        "loss": asdict(config.loss),
        "optim": {
            "lr": config.lr,
            "weight_decay": config.weight_decay,
            "beta1": config.beta1,
            "beta2": config.beta2,
            "eps": config.eps,
            "warmup_start_lr": config.warmup_start_lr,
            "final_lr": config.final_lr,
            "warmup_steps": config.warmup_steps,
        },
    }


def config_from_dict(raw: dict) -> TrainConfig:
    try:
        train = raw["train"]
        optim = raw["optim"]
        return TrainConfig(
            batch_b=int(train["batch_b"]),
            epochs=int(train["epochs"]),
            seed=int(train["seed"]),
            checkpoint_every=int(train.get("checkpoint_every", 0)),
            eval_every=int(train.get("eval_every", 0)),
            adapter_x=ad.AdapterConfig(**raw["adapter_x"]),
            adapter_y=ad.AdapterConfig(**raw["adapter_y"]),
            augment=MixConfig(**raw["augment"]),
            loss=LossConfig(**raw["loss"]),
            lr=float(optim["lr"]),
            weight_decay=float(optim["weight_decay"]),
            beta1=float(optim["beta1"]),
            beta2=float(optim["beta2"]),
            eps=float(optim["eps"]),
            warmup_start_lr=float(optim["warmup_start_lr"]),
            final_lr=float(optim["final_lr"]),
            warmup_steps=(None if optim.get("warmup_steps") is None
                          else int(optim["warmup_steps"])),
        )
    except (KeyError, TypeError) as exc:
        raise TrainError(f"malformed config snapshot: {exc}") from exc


def config_json(config: TrainConfig) -> str:
    """Canonical JSON form (sorted keys) used in checkpoints and hashing."""
    return json.dumps(config_to_dict(config), sort_keys=True)


def preset(task: str, input_dim_x: int, input_dim_y: int) -> TrainConfig:
    """Reference hyperparameter sets for the two supported task families."""
    if task == "image_text":
        depth, shared = 4, 512
        return TrainConfig(
            batch_b=20_000, epochs=500, seed=0,
            adapter_x=ad.AdapterConfig(input_dim=input_dim_x, shared_dim=shared,
                                       depth=depth),
            adapter_y=ad.AdapterConfig(input_dim=input_dim_y, shared_dim=shared,
                                       depth=depth),
            lr=1e-3, weight_decay=0.1,
        )
    if task == "audio_text":
        depth, shared = 2, 512
        return TrainConfig(
            batch_b=2_000, epochs=50, seed=0,
            adapter_x=ad.AdapterConfig(input_dim=input_dim_x, shared_dim=shared,
                                       depth=depth),
            adapter_y=ad.AdapterConfig(input_dim=input_dim_y, shared_dim=shared,
                                       depth=depth),
            lr=1e-4, weight_decay=0.5,
        )
    raise ValueError(f"unknown preset {task!r}")


def _stream(seed: int, purpose: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, purpose, *path)))


def _moment_names(config: TrainConfig) -> list[str]:
    names = [f"x.{n}" for n in ad.param_shapes(config.adapter_x)]
    names += [f"y.{n}" for n in ad.param_shapes(config.adapter_y)]
    names.append("log_t")
    return names


def _schedule(config: TrainConfig, store_count: int) -> tuple[OptimConfig, int]:
    if 2 * config.batch_b > store_count:
        raise TrainError(
            f"need 2*B = {2 * config.batch_b} rows per step but the store "
            f"holds only {store_count}"
        )
    steps_per_epoch = store_count // (2 * config.batch_b)
    total = config.epochs * steps_per_epoch
    warmup = steps_per_epoch if config.warmup_steps is None else config.warmup_steps
    warmup = min(warmup, total)
    opt = OptimConfig(
        lr=config.lr, weight_decay=config.weight_decay, beta1=config.beta1,
        beta2=config.beta2, eps=config.eps,
        warmup_start_lr=config.warmup_start_lr, final_lr=config.final_lr,
        total_steps=total, warmup_steps=warmup,
    )
    return opt, steps_per_epoch


def _check_store(config: TrainConfig, store: StoreHandle) -> None:
    if store.dim_x != config.adapter_x.input_dim:
        raise TrainError(
            f"store X dim {store.dim_x} does not match adapter input "
            f"{config.adapter_x.input_dim}"
        )
    if store.dim_y != config.adapter_y.input_dim:
        raise TrainError(
            f"store Y dim {store.dim_y} does not match adapter input "
            f"{config.adapter_y.input_dim}"
        )


def train(store: StoreHandle, config: TrainConfig, heldout: StoreHandle = None,
          metrics_path=None, checkpoint_dir=None) -> Checkpoint:
    """Run a fresh training job; returns the final state as a checkpoint."""
    _check_store(config, store)
    _schedule(config, store.count)  # validate before allocating anything
    params_x = ad.init_params(config.adapter_x,
                              np.random.SeedSequence((config.seed, _INIT, 0)))
    params_y = ad.init_params(config.adapter_y,
                              np.random.SeedSequence((config.seed, _INIT, 1)))
    log_t = init_log_t(config.loss)
    combined = _combined_params(params_x, params_y, log_t)
    ckpt = Checkpoint(config=config, params_x=params_x, params_y=params_y,
                      log_t=log_t, opt_state=init_state(combined),
                      epoch=0, step=0, epoch_losses=[])
    return _run(ckpt, store, heldout, metrics_path, checkpoint_dir)


def resume(ckpt: Checkpoint, store: StoreHandle, heldout: StoreHandle = None,
           metrics_path=None, checkpoint_dir=None) -> Checkpoint:
    """Continue a checkpointed run to its configured epoch count."""
    _check_store(ckpt.config, store)
    if ckpt.epoch >= ckpt.config.epochs:
        return ckpt
    return _run(ckpt, store, heldout, metrics_path, checkpoint_dir)


def _combined_params(params_x, params_y, log_t) -> dict[str, np.ndarray]:
    combined = {f"x.{k}": v for k, v in params_x.items()}
    combined.update({f"y.{k}": v for k, v in params_y.items()})
    combined["log_t"] = log_t
    return combined


def _run(ckpt: Checkpoint, store: StoreHandle, heldout, metrics_path,
         checkpoint_dir) -> Checkpoint:
    config = ckpt.config
    opt_cfg, steps_per_epoch = _schedule(config, store.count)
    combined = _combined_params(ckpt.params_x, ckpt.params_y, ckpt.log_t)
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(ckpt.epoch, config.epochs):
            losses = []
            batches = epoch_batches(
                store, 2 * config.batch_b,
                seed=np.random.SeedSequence((config.seed, _SHUFFLE, epoch)))
            for b_idx, batch in enumerate(batches):
                global_step = epoch * steps_per_epoch + b_idx
                mixed = apply_scheme(batch.z_x, batch.z_y, config.augment,
                                     _stream(config.seed, _MIX, epoch, b_idx))
                report, grads_x, grads_y, dlog_t = step_loss(
                    ckpt.params_x, config.adapter_x,
                    ckpt.params_y, config.adapter_y,
                    ckpt.log_t, mixed.z_x, mixed.z_y, mode="train",
                    rng=_stream(config.seed, _DROPOUT, epoch, b_idx))
                if not math.isfinite(report.loss):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch} step {b_idx} "
                        f"(global step {global_step})"
                    )
                if not config.loss.learnable_t:
                    dlog_t = 0.0
                grads = _combined_params(grads_x, grads_y,
                                         np.asarray(dlog_t, dtype=np.float64))
                lr_now = lr_at(global_step, opt_cfg)
                apply_step(combined, grads, ckpt.opt_state, lr_now, opt_cfg)
                clamp_log_t(ckpt.log_t, config.loss.max_logit_scale)
                losses.append(report.loss)
                ckpt.step = global_step + 1
                if sink:
                    record = {
                        "kind": "step", "epoch": epoch, "step": global_step,
                        "loss": report.loss, "loss_xy": report.loss_xy,
                        "loss_yx": report.loss_yx,
                        "logit_scale": float(np.exp(ckpt.log_t)),
                        "lr": lr_now, "lam": mixed.lam,
                    }
                    sink.write(json.dumps(record, sort_keys=True) + "\n")
            ckpt.epoch = epoch + 1
            ckpt.epoch_losses.append(float(np.mean(losses)))
            if heldout is not None and config.eval_every > 0 \
                    and ckpt.epoch % config.eval_every == 0:
                hx, hy = heldout.read_all()
                reports = retrieval.evaluate_pair(
                    ckpt.params_x, config.adapter_x, ckpt.params_y,
                    config.adapter_y, hx, hy, ks=(1, 5, 10))
                if sink:
                    record = {"kind": "eval", "epoch": ckpt.epoch}
                    for direction, rep in reports.items():
                        for k, v in rep.recall_at.items():
                            record[f"{direction}_r{k}"] = v
                    sink.write(json.dumps(record, sort_keys=True) + "\n")
            if checkpoint_dir and config.checkpoint_every > 0 \
                    and ckpt.epoch % config.checkpoint_every == 0 \
                    and ckpt.epoch < config.epochs:
                path = Path(checkpoint_dir) / f"checkpoint_epoch{ckpt.epoch:05d}.fxck"
                save_checkpoint(ckpt, path)
    finally:
        if sink:
            sink.close()
    if checkpoint_dir:
        save_checkpoint(ckpt, Path(checkpoint_dir) / "checkpoint_final.fxck")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize the full training state; see the module docstring for layout."""
    config = ckpt.config
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<I", CKPT_VERSION)
    cfg_bytes = config_json(config).encode("utf-8")
    blob += struct.pack("<Q", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<QQQ", ckpt.epoch, ckpt.step, ckpt.opt_state.step)
    blob += struct.pack("<d", float(ckpt.log_t))
    flat_x = ad.flatten_params(ckpt.params_x, config.adapter_x).astype("<f4")
    flat_y = ad.flatten_params(ckpt.params_y, config.adapter_y).astype("<f4")
    blob += struct.pack("<Q", flat_x.size) + flat_x.tobytes()
    blob += struct.pack("<Q", flat_y.size) + flat_y.tobytes()
    names = _moment_names(config)
    m_flat = np.concatenate(
        [np.asarray(ckpt.opt_state.m[n], dtype="<f8").ravel() for n in names])
    v_flat = np.concatenate(
        [np.asarray(ckpt.opt_state.v[n], dtype="<f8").ravel() for n in names])
    blob += struct.pack("<Q", m_flat.size)
    blob += m_flat.tobytes() + v_flat.tobytes()
    hist = np.asarray(ckpt.epoch_losses, dtype="<f8")
    blob += struct.pack("<Q", hist.size) + hist.tobytes()
    blob += hashlib.blake2b(bytes(blob), digest_size=8).digest()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.off, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise TrainError(f"truncated checkpoint: {self.path}")
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise TrainError(f"truncated checkpoint: {path}")
    body, digest = raw[:-8], raw[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise TrainError(f"checkpoint digest mismatch: {path}")
    r = _Reader(body, path)
    if r.take(4) != CKPT_MAGIC:
        raise TrainError(f"not a checkpoint file: {path}")
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise TrainError(f"unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<Q")
    config = config_from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    epoch, step, opt_step = r.unpack("<QQQ")
    (log_t_val,) = r.unpack("<d")
    (n_x,) = r.unpack("<Q")
    flat_x = np.frombuffer(r.take(4 * n_x), dtype="<f4")
    (n_y,) = r.unpack("<Q")
    flat_y = np.frombuffer(r.take(4 * n_y), dtype="<f4")
    params_x = ad.unflatten_params(flat_x, config.adapter_x)
    params_y = ad.unflatten_params(flat_y, config.adapter_y)
    (n_m,) = r.unpack("<Q")
    m_flat = np.frombuffer(r.take(8 * n_m), dtype="<f8")
    v_flat = np.frombuffer(r.take(8 * n_m), dtype="<f8")
    (n_hist,) = r.unpack("<Q")
    hist = np.frombuffer(r.take(8 * n_hist), dtype="<f8")
    if r.off != len(body):
        raise TrainError(f"trailing bytes in checkpoint: {path}")

    log_t = np.array(log_t_val, dtype=np.float64)
    shapes = {f"x.{n}": s for n, s in ad.param_shapes(config.adapter_x).items()}
    shapes.update({f"y.{n}": s for n, s in ad.param_shapes(config.adapter_y).items()})
    shapes["log_t"] = ()
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if n_m != expected:
        raise TrainError(
            f"moment section holds {n_m} values, config implies {expected}")
    m, v, off = {}, {}, 0
    for name in _moment_names(config):
        size = int(np.prod(shapes[name]))
        m[name] = m_flat[off : off + size].reshape(shapes[name]).copy()
        v[name] = v_flat[off : off + size].reshape(shapes[name]).copy()
        off += size
    state = OptimState(m=m, v=v, step=opt_step)
    return Checkpoint(config=config, params_x=params_x, params_y=params_y,
                      log_t=log_t, opt_state=state, epoch=epoch, step=step,
                      epoch_losses=[float(x) for x in hist])


def checkpoint_id(path) -> str:
    """Short content hash identifying a checkpoint file in reports."""
    h = hashlib.blake2b(Path(path).read_bytes(), digest_size=8)
    return h.hexdigest()
