"""Symmetric contrastive alignment loss over in-batch negatives.

Given matched batches of unit-norm embeddings ``s_x`` and ``s_y`` (row i of
each is a positive pair), the similarity matrix ``s_x @ s_y.T`` is scaled by
a learnable factor ``exp(log_t)`` and read twice as a classification problem:
each X row must pick its own Y among the batch (cross-entropy with diagonal
targets), and symmetrically each Y row must pick its own X.  The loss is the
mean of the two directions.  The other B-1 rows of the batch serve as
negatives -- there is no separate negative queue.

The temperature lives in log space so the scale stays positive under
additive updates; by convention it is initialized at 1/0.07 and clamped to
at most 100 after every optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adapter as ad
from . import numerics as nm

UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class LossConfig:
    """Temperature settings for the contrastive loss."""

    init_logit_scale: float = 1.0 / 0.07
    max_logit_scale: float = 100.0
    learnable_t: bool = True

    def __post_init__(self):
        if self.init_logit_scale <= 0:
            raise ValueError("init_logit_scale must be positive")
        if self.max_logit_scale < self.init_logit_scale:
            raise ValueError("max_logit_scale must be >= init_logit_scale")


@dataclass
class LossReport:
    """One step's loss, its two directional halves, and the scale used."""

    loss: float
    loss_xy: float
    loss_yx: float
    logit_scale: float
    batch_b: int


def init_log_t(config: LossConfig) -> np.ndarray:
    """Log-temperature as a 0-d float64 array (updated in place by training)."""
    return np.array(math.log(config.init_logit_scale), dtype=np.float64)


def clamp_log_t(log_t: np.ndarray, max_scale: float) -> None:
    """Cap the logit scale at ``max_scale`` (in place); exp keeps it positive."""
    cap = math.log(max_scale)
    if float(log_t) > cap:
        log_t[...] = cap


def symmetric_infonce(s_x: np.ndarray, s_y: np.ndarray, log_t):
    """Loss and exact gradients for one batch of unit-norm embedding pairs.

    Returns ``(report, ds_x, ds_y, dlog_t)``.  Rows must be unit-norm within
    1e-4 and the batch must hold at least two pairs (otherwise there are no
    negatives and the problem is vacuous).
    """
    if s_x.shape != s_y.shape:
        raise ValueError(f"embedding shapes differ: {s_x.shape} vs {s_y.shape}")
    b = s_x.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 pairs")
    for name, s in (("s_x", s_x), ("s_y", s_y)):
        norms = np.linalg.norm(s.astype(np.float64), axis=1)
        worst = np.max(np.abs(norms - 1.0))
        if worst > UNIT_NORM_TOL:
            raise ValueError(
                f"{name} rows are not unit-norm (max deviation {worst:.2e})"
            )
    scale = math.exp(float(log_t))
    sim = np.matmul(s_x.astype(np.float64), s_y.astype(np.float64).T)
    logits = sim * scale
    targets = np.arange(b)
    loss_xy, probs_xy = nm.softmax_cross_entropy(logits, targets)
    loss_yx, probs_yx = nm.softmax_cross_entropy(logits.T, targets)
    loss = 0.5 * (loss_xy + loss_yx)

    # d(loss)/d(logits), folding the transposed direction back in
    eye = np.eye(b)
    d_logits = 0.5 * ((probs_xy - eye) + (probs_yx - eye).T) / b
    dlog_t = float(np.sum(d_logits * logits))
    d_sim = d_logits * scale
    ds_x = np.matmul(d_sim, s_y.astype(np.float64)).astype(s_x.dtype)
    ds_y = np.matmul(d_sim.T, s_x.astype(np.float64)).astype(s_y.dtype)
    report = LossReport(loss=loss, loss_xy=loss_xy, loss_yx=loss_yx,
                        logit_scale=scale, batch_b=b)
    return report, ds_x, ds_y, dlog_t


def step_loss(params_x, cfg_x: ad.AdapterConfig, params_y, cfg_y: ad.AdapterConfig,
              log_t, z_x: np.ndarray, z_y: np.ndarray,
              mode: str = "train", rng=None):
    """Full training-step loss: adapters -> row normalization -> contrastive.

    Returns ``(report, grads_x, grads_y, dlog_t)`` with gradient dicts for
    every parameter of both adapters.  The same rng drives dropout on both
    sides (X first, then Y), so a fixed rng reproduces the step exactly.
    """
    if z_x.shape[0] != z_y.shape[0]:
        raise ValueError("modalities disagree on batch size")
    out_x, cache_x = ad.forward_cached(params_x, cfg_x, z_x, mode=mode, rng=rng)
    out_y, cache_y = ad.forward_cached(params_y, cfg_y, z_y, mode=mode, rng=rng)
    s_x, norm_cache_x = nm.l2_normalize(out_x)
    s_y, norm_cache_y = nm.l2_normalize(out_y)
    report, ds_x, ds_y, dlog_t = symmetric_infonce(s_x, s_y, log_t)
    d_out_x = nm.l2_normalize_backward(ds_x, norm_cache_x)
    d_out_y = nm.l2_normalize_backward(ds_y, norm_cache_y)
    _, grads_x = ad.backward(params_x, cfg_x, cache_x, d_out_x)
    _, grads_y = ad.backward(params_y, cfg_y, cache_y, d_out_y)
    return report, grads_x, grads_y, dlog_t
