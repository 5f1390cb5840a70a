"""Dense matrix kernels and their hand-derived gradients.

This is the minimal differentiable substrate used by the fusion adapters and
the contrastive objective.  The computation graph of the whole model is fixed
and shallow, so every operation ships an explicit backward function instead of
relying on a general autodiff tape.

Conventions
-----------
* Values are stored as row-major ``float32`` arrays; every reduction (matrix
  products, means, variances, norms, log-sum-exp) accumulates in ``float64``
  and the result is cast back to the input dtype.  Passing ``float64`` inputs
  keeps the whole computation in 64-bit, which is what the gradient checks in
  the test-suite do.
* Operations are pure functions of their inputs plus an explicit RNG, so they
  are safe to call concurrently on disjoint data.
* Every public operation verifies that its output is finite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Rows with an L2 norm at or below this cannot be safely normalized.
MIN_ROW_NORM = 1e-12


def as_rng(seed_or_rng) -> np.random.Generator:
    """Coerce an int seed, a SeedSequence, or a Generator into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of {op}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with 64-bit accumulation, result cast back to the input dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_dtype = np.result_type(a, b)
    c = np.matmul(a, b, dtype=np.float64)
    return _check_finite(c.astype(out_dtype, copy=False), "matmul")


def matmul_backward(d_c: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Gradients of ``c = a @ b``: ``dA = dC @ B^T`` and ``dB = A^T @ dC``."""
    d_c64 = np.asarray(d_c, dtype=np.float64)
    d_a = np.matmul(d_c64, np.asarray(b, dtype=np.float64).T)
    d_b = np.matmul(np.asarray(a, dtype=np.float64).T, d_c64)
    return d_a.astype(np.asarray(a).dtype, copy=False), d_b.astype(np.asarray(b).dtype, copy=False)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU ``x * Phi(x)`` with the erf-based standard-normal CDF.

    The tanh approximation is deliberately not used: the adapters are tiny, and
    the exact form keeps finite-difference tolerances tight.
    """
    x = np.asarray(x)
    x64 = x.astype(np.float64, copy=False)
    cdf = 0.5 * (1.0 + erf(x64 * _INV_SQRT2))
    return _check_finite((x64 * cdf).astype(x.dtype, copy=False), "gelu")


def gelu_backward(d_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    x64 = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x64 * _INV_SQRT2))
    pdf = np.exp(-0.5 * x64 * x64) * _INV_SQRT_2PI
    d_x = np.asarray(d_y, dtype=np.float64) * (cdf + x64 * pdf)
    return d_x.astype(np.asarray(x).dtype, copy=False)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Per-row normalization ``(x - mu) / sqrt(var + eps)`` followed by affine.

    Returns ``(y, cache)``; the cache feeds :func:`layer_norm_backward`.
    Row statistics are computed in 64-bit.
    """
    x = np.asarray(x)
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(
            f"layer_norm shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x64 = x.astype(np.float64, copy=False)
    mu = x64.mean(axis=1, keepdims=True)
    var = x64.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    y = xhat * gamma.astype(np.float64) + beta.astype(np.float64)
    cache = (xhat, inv, gamma)
    return _check_finite(y.astype(x.dtype, copy=False), "layer_norm"), cache


def layer_norm_backward(d_y: np.ndarray, cache):
    """Full backward: gradients w.r.t. the input, gamma, and beta."""
    xhat, inv, gamma = cache
    d_y64 = np.asarray(d_y, dtype=np.float64)
    d_gamma = (d_y64 * xhat).sum(axis=0)
    d_beta = d_y64.sum(axis=0)
    d_xhat = d_y64 * gamma.astype(np.float64)
    m1 = d_xhat.mean(axis=1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=1, keepdims=True)
    d_x = inv * (d_xhat - m1 - xhat * m2)
    dtype = np.asarray(d_y).dtype
    return (
        d_x.astype(dtype, copy=False),
        d_gamma.astype(np.asarray(gamma).dtype, copy=False),
        d_beta.astype(np.asarray(gamma).dtype, copy=False),
    )


def dropout(x: np.ndarray, p: float, mode: str = "train", rng=None):
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p).

    Eval mode is the identity.  Returns ``(y, mask)`` where the mask is ``None``
    whenever nothing was dropped; the same mask drives the backward pass.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = np.asarray(x)
    if mode == "eval" or p == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    gen = as_rng(rng)
    mask = gen.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    y = np.where(mask, x.astype(np.float64, copy=False) * scale, 0.0)
    return y.astype(x.dtype, copy=False), mask


def dropout_backward(d_y: np.ndarray, mask, p: float) -> np.ndarray:
    if mask is None:
        return np.asarray(d_y)
    d_y = np.asarray(d_y)
    scale = 1.0 / (1.0 - p)
    d_x = np.where(mask, d_y.astype(np.float64, copy=False) * scale, 0.0)
    return d_x.astype(d_y.dtype, copy=False)


def l2_normalize(x: np.ndarray):
    """Scale each row to unit Euclidean norm.  Returns ``(y, cache)``."""
    x = np.asarray(x)
    x64 = x.astype(np.float64, copy=False)
    norms = np.sqrt((x64 * x64).sum(axis=1, keepdims=True))
    if np.any(norms <= MIN_ROW_NORM):
        raise ValueError("l2_normalize: row norm at or below 1e-12")
    y = x64 / norms
    cache = (y, norms)
    return _check_finite(y.astype(x.dtype, copy=False), "l2_normalize"), cache


def l2_normalize_backward(d_y: np.ndarray, cache) -> np.ndarray:
    """Per-row Jacobian product ``(I - s s^T) / ||x||`` applied to ``d_y``."""
    y, norms = cache
    d_y64 = np.asarray(d_y, dtype=np.float64)
    proj = (d_y64 * y).sum(axis=1, keepdims=True)
    d_x = (d_y64 - y * proj) / norms
    return d_x.astype(np.asarray(d_y).dtype, copy=False)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross entropy of row-wise softmax against integer targets.

    Numerically stabilized via per-row max subtraction.  Returns
    ``(loss, probs)``; ``probs`` feeds the backward pass.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    n_rows, n_cols = logits.shape
    if targets.shape != (n_rows,):
        raise ValueError(f"targets shape {targets.shape} does not match {n_rows} rows")
    if np.any(targets < 0) or np.any(targets >= n_cols):
        raise IndexError("softmax_cross_entropy: target index out of range")
    z = logits.astype(np.float64, copy=False)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n_rows), targets].mean()
    probs = np.exp(logp)
    return float(loss), probs


def softmax_cross_entropy_backward(probs: np.ndarray, targets: np.ndarray, dtype=np.float64):
    """``(softmax - one_hot) / B`` for the mean-reduced loss."""
    n_rows = probs.shape[0]
    d_logits = probs.copy()
    d_logits[np.arange(n_rows), np.asarray(targets)] -= 1.0
    d_logits /= n_rows
    return d_logits.astype(dtype, copy=False)
