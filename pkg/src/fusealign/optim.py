"""Decoupled-weight-decay Adam with a warmup-then-cosine learning-rate schedule.

The optimizer treats parameters as a flat dict of named arrays and keeps
64-bit first/second moments per entry.  Weight decay is decoupled (applied
directly to the parameter, not mixed into the moments) and skipped for
normalization scales/shifts and the loss temperature, which by convention
are left unregularized.

The schedule rises linearly from ``warmup_start_lr`` to the peak ``lr`` over
``warmup_steps`` optimizer steps, then follows a half-cosine down to
``final_lr`` at ``total_steps``.  Both pieces are exact at their endpoints:
step 0 gives ``warmup_start_lr``, step ``warmup_steps`` gives ``lr``, step
``total_steps`` gives ``final_lr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_start_lr: float = 1e-6
    total_steps: int = 1
    warmup_steps: int = 0
    final_lr: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.warmup_start_lr < 0 or self.final_lr < 0:
            raise ValueError("schedule endpoints must be non-negative")


@dataclass
class OptimState:
    """Per-parameter moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_state(params: dict[str, np.ndarray]) -> OptimState:
    """Zeroed 64-bit moments mirroring every parameter's shape."""
    m = {k: np.zeros(np.shape(p), dtype=np.float64) for k, p in params.items()}
    v = {k: np.zeros(np.shape(p), dtype=np.float64) for k, p in params.items()}
    return OptimState(m=m, v=v, step=0)


def decay_excluded(name: str) -> bool:
    """Normalization scales/shifts and the temperature receive no decay."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("ln_gamma", "ln_beta", "log_t")


def lr_at(step: int, config: OptimConfig) -> float:
    """Learning rate for optimizer step ``step`` (0-based)."""
    if not 0 <= step <= config.total_steps:
        raise ValueError(
            f"step {step} outside schedule range [0, {config.total_steps}]"
        )
    if step < config.warmup_steps:
        frac = step / config.warmup_steps
        return config.warmup_start_lr + (config.lr - config.warmup_start_lr) * frac
    decay_span = config.total_steps - config.warmup_steps
    if decay_span == 0:
        return config.lr
    progress = (step - config.warmup_steps) / decay_span
    return config.final_lr + 0.5 * (config.lr - config.final_lr) * (
        1.0 + math.cos(math.pi * progress)
    )


def apply_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimState, lr_now: float, config: OptimConfig):
    """One in-place update of every parameter; returns (params, state).

    Moments are accumulated in 64-bit regardless of parameter dtype; the
    final update is cast back to each parameter's own dtype.
    """
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise ValueError(f"parameter/gradient name mismatch: {sorted(missing)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(theta):
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} {np.shape(theta)}"
            )
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        if config.weight_decay > 0 and not decay_excluded(name):
            update = update + config.weight_decay * np.asarray(theta, dtype=np.float64)
        theta[...] = (np.asarray(theta, dtype=np.float64) - lr_now * update).astype(
            theta.dtype)
    return params, state
