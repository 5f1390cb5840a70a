"""Latent-space augmentations applied to paired batches before the adapters.

The central one is paired convex mixing: split a batch of positive pairs into
two halves and blend corresponding pairs with a single Beta-distributed
coefficient shared across all rows *and both modalities* of the step.
Because both sides of each pair are blended with the same coefficient, the
mixed rows remain positive pairs of one another, so the contrastive objective
still has valid targets.  Mixing in latent space costs one multiply-add per
side -- no raw-data pipeline involved.

Also provided, mostly as ablation foils: isotropic Gaussian noise and a
randomized per-dimension quantizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAMBDA_CLIP = 1e-6

SCHEMES = ("fusemix", "gaussian", "random_quantize", "none")


@dataclass(frozen=True)
class MixConfig:
    """Knobs for the per-step augmentation.

    alpha    Beta(alpha, alpha) concentration for fusemix; 1 gives uniform
             mixing weights.
    scheme   one of "fusemix", "gaussian", "random_quantize", "none".
    sigma    noise std-dev for the gaussian scheme.
    bins_lo, bins_hi
             inclusive range the quantizer draws its bin count from.
    """

    alpha: float = 1.0
    scheme: str = "fusemix"
    sigma: float = 0.01
    bins_lo: int = 2
    bins_hi: int = 32

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown augmentation scheme {self.scheme!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not (2 <= self.bins_lo <= self.bins_hi):
            raise ValueError("bin range must satisfy 2 <= bins_lo <= bins_hi")


@dataclass
class MixedBatch:
    """Output of one augmentation step: paired rows ready for the adapters.

    ``lam`` records the shared mixing coefficient and is None for any scheme
    other than fusemix.
    """

    z_x: np.ndarray
    z_y: np.ndarray
    lam: float | None


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """One draw from Beta(alpha, alpha) as a ratio of two Gamma variates.

    g1 / (g1 + g2) with g_i ~ Gamma(alpha, 1) is Beta(alpha, alpha)
    distributed; the result is clamped to [1e-6, 1 - 1e-6] so neither half of
    a mixed pair ever vanishes entirely.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g1 = rng.standard_gamma(alpha)
    g2 = rng.standard_gamma(alpha)
    lam = g1 / (g1 + g2)
    return float(np.clip(lam, LAMBDA_CLIP, 1.0 - LAMBDA_CLIP))


def fusemix(z_x: np.ndarray, z_y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Blend the two halves of a paired batch with one shared coefficient.

    Rows ``i`` and ``i + B`` of a 2B-row batch are combined as
    ``lam * first + (1 - lam) * second`` on both modalities, producing B
    mixed pairs.  The row count must be even; ``lam`` must lie strictly
    inside (0, 1).
    """
    b = z_x.shape[0]
    if b != z_y.shape[0]:
        raise ValueError("modalities disagree on batch size")
    if b % 2 != 0 or b < 2:
        raise ValueError("paired mixing needs an even batch of at least 2 rows")
    if not (0.0 < lam < 1.0):
        raise ValueError(f"mixing coefficient {lam} outside (0, 1)")
    h = b // 2

    def mix(z):
        out = lam * z[:h].astype(np.float64) + (1.0 - lam) * z[h:].astype(np.float64)
        return out.astype(z.dtype)

    return mix(z_x), mix(z_y)


def gaussian_noise(z: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add isotropic Gaussian noise elementwise, preserving shape and dtype."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return z.copy()
    return (z + rng.normal(scale=sigma, size=z.shape)).astype(z.dtype)


def quantize_midpoints(z: np.ndarray, k: int) -> np.ndarray:
    """Snap each dimension to the midpoint of one of ``k`` equal bins.

    Bin edges span the per-dimension [min, max] of the batch; dimensions
    with zero range pass through unchanged.  Every output value lies within
    half a bin width of its input.
    """
    if k < 2:
        raise ValueError("bin count must be at least 2")
    z64 = z.astype(np.float64)
    lo = z64.min(axis=0, keepdims=True)
    hi = z64.max(axis=0, keepdims=True)
    span = hi - lo
    flat = span == 0
    safe_span = np.where(flat, 1.0, span)
    idx = np.floor((z64 - lo) / safe_span * k)
    idx = np.clip(idx, 0, k - 1)
    mids = lo + (idx + 0.5) * safe_span / k
    out = np.where(flat, z64, mids)
    return out.astype(z.dtype)


def random_quantize(z: np.ndarray, bin_range: tuple[int, int],
                    rng: np.random.Generator) -> np.ndarray:
    """Quantize with a bin count drawn uniformly from ``bin_range`` (inclusive)."""
    lo, hi = bin_range
    if not (2 <= lo <= hi):
        raise ValueError("bin range must satisfy 2 <= lo <= hi")
    k = int(rng.integers(lo, hi + 1))
    return quantize_midpoints(z, k)


def apply_scheme(batch_x: np.ndarray, batch_y: np.ndarray, config: MixConfig,
                 rng: np.random.Generator) -> MixedBatch:
    """Dispatch one augmentation step on a paired batch of 2B rows.

    For "fusemix" the batch is folded to B mixed pairs.  The other schemes
    take the first B rows (discarding the second half) so batch semantics
    and loss scale match the fusemix path: "gaussian" then perturbs both
    modalities independently, "random_quantize" snaps each modality with one
    shared bin count, and "none" passes rows through untouched.
    """
    if config.scheme == "fusemix":
        lam = sample_beta(config.alpha, rng)
        mixed_x, mixed_y = fusemix(batch_x, batch_y, lam)
        return MixedBatch(z_x=mixed_x, z_y=mixed_y, lam=lam)
    h = batch_x.shape[0] // 2
    z_x, z_y = batch_x[:h], batch_y[:h]
    if config.scheme == "gaussian":
        z_x = gaussian_noise(z_x, config.sigma, rng)
        z_y = gaussian_noise(z_y, config.sigma, rng)
    elif config.scheme == "random_quantize":
        k = int(rng.integers(config.bins_lo, config.bins_hi + 1))
        z_x = quantize_midpoints(z_x, k)
        z_y = quantize_midpoints(z_y, k)
    else:  # "none"
        z_x, z_y = z_x.copy(), z_y.copy()
    return MixedBatch(z_x=z_x, z_y=z_y, lam=None)
