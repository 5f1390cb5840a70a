"""Residual inverted-bottleneck MLP adapters mapping latents into a shared space.

Each adapter is a stack of residual blocks followed by a projection::

    for each block:  x <- x + W_out( dropout( gelu( W_in( LN(x) ) ) ) )
    output:          proj( LN(x) )

The inner width is ``expansion_factor`` times the input width (widen, apply
the nonlinearity, narrow back), so every block preserves shape and the
residual path is a plain addition.  Parameters live in an ordered dict of
float32 arrays; forward/backward are written against the primitive ops in
:mod:`fusealign.numerics`, so gradients are exact and checkable against
finite differences.

An adapter can also be configured as the identity function (zero parameters,
bit-exact passthrough), which is useful when one modality's latents should
be adopted as the shared space unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm


@dataclass(frozen=True)
class AdapterConfig:
    """Shape and regularization settings for one adapter.

    identity=True turns the adapter into a passthrough; it requires
    input_dim == shared_dim and owns no parameters.
    """

    input_dim: int
    shared_dim: int = 512
    depth: int = 4
    expansion_factor: int = 4
    dropout_p: float = 0.6
    identity: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.shared_dim < 1:
            raise ValueError("input_dim and shared_dim must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.expansion_factor <= 0:
            raise ValueError("expansion_factor must be positive")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.identity and self.input_dim != self.shared_dim:
            raise ValueError(
                "identity adapter requires input_dim == shared_dim "
                f"(got {self.input_dim} vs {self.shared_dim})"
            )

    @property
    def hidden_dim(self) -> int:
        return int(self.expansion_factor * self.input_dim)


def param_shapes(config: AdapterConfig) -> dict[str, tuple]:
    """Ordered name -> shape map; this order defines the flat layout."""
    if config.identity:
        return {}
    d, h = config.input_dim, config.hidden_dim
    shapes: dict[str, tuple] = {}
    for i in range(config.depth):
        shapes[f"blocks.{i}.ln_gamma"] = (d,)
        shapes[f"blocks.{i}.ln_beta"] = (d,)
        shapes[f"blocks.{i}.w_in"] = (d, h)
        shapes[f"blocks.{i}.b_in"] = (h,)
        shapes[f"blocks.{i}.w_out"] = (h, d)
        shapes[f"blocks.{i}.b_out"] = (d,)
    shapes["final.ln_gamma"] = (d,)
    shapes["final.ln_beta"] = (d,)
    shapes["proj.w"] = (d, config.shared_dim)
    shapes["proj.b"] = (config.shared_dim,)
    return shapes


def param_count(config: AdapterConfig) -> int:
    """Closed-form parameter count.

    depth * (2D + D*H + H + H*D + D) + 2D + D*D_s + D_s  with H = e*D.
    """
    if config.identity:
        return 0
    d, h, ds = config.input_dim, config.hidden_dim, config.shared_dim
    per_block = 2 * d + d * h + h + h * d + d
    return config.depth * per_block + 2 * d + d * ds + ds


def init_params(config: AdapterConfig, seed) -> dict[str, np.ndarray]:
    """Fresh float32 parameters, deterministic under the seed.

    Linear weights are uniform fan-in, U(-1/sqrt(fan_in), +1/sqrt(fan_in));
    biases start at zero, LayerNorm scales at one.
    """
    rng = nm.as_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("ln_gamma",):
            params[name] = np.ones(shape, dtype=np.float32)
        elif leaf in ("ln_beta", "b_in", "b_out", "b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:  # weight matrices: w_in, w_out, w
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params


def flatten_params(params: dict[str, np.ndarray], config: AdapterConfig) -> np.ndarray:
    """Concatenate all tensors in declaration order into one 1-D array."""
    shapes = param_shapes(config)
    if set(shapes) != set(params):
        raise ValueError("parameter names do not match the config")
    if not shapes:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([np.asarray(params[name]).ravel() for name in shapes])


def unflatten_params(flat: np.ndarray, config: AdapterConfig,
                     dtype=np.float32) -> dict[str, np.ndarray]:
    """Inverse of :func:`flatten_params`."""
    shapes = param_shapes(config)
    total = sum(int(np.prod(s)) for s in shapes.values())
    flat = np.asarray(flat).ravel()
    if flat.size != total:
        raise ValueError(f"flat buffer has {flat.size} values, expected {total}")
    params = {}
    offset = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = flat[offset : offset + size].reshape(shape).astype(dtype)
        offset += size
    return params


def _check_input(config: AdapterConfig, z: np.ndarray) -> None:
    if z.ndim != 2 or z.shape[1] != config.input_dim:
        raise ValueError(
            f"adapter expects B x {config.input_dim} input, got {z.shape}"
        )


def forward(params, config: AdapterConfig, z: np.ndarray,
            mode: str = "eval", rng=None) -> np.ndarray:
    """Map a batch of latents into the shared space (no cache retained)."""
    out, _ = forward_cached(params, config, z, mode=mode, rng=rng)
    return out


def forward_cached(params, config: AdapterConfig, z: np.ndarray,
                   mode: str = "eval", rng=None):
    """Forward pass that also returns the activation cache for backward."""
    _check_input(config, z)
    if config.identity:
        return z, ("identity", z.shape)
    if mode == "train" and config.dropout_p > 0 and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    x = z
    block_caches = []
    for i in range(config.depth):
        t, ln_cache = nm.layer_norm(x, params[f"blocks.{i}.ln_gamma"],
                                    params[f"blocks.{i}.ln_beta"])
        u = nm.matmul(t, params[f"blocks.{i}.w_in"]) + params[f"blocks.{i}.b_in"]
        g = nm.gelu(u)
        dropped, mask = nm.dropout(g, config.dropout_p, mode=mode, rng=rng)
        v = nm.matmul(dropped, params[f"blocks.{i}.w_out"]) + params[f"blocks.{i}.b_out"]
        block_caches.append((ln_cache, t, u, mask, dropped))
        x = x + v
    y, final_ln_cache = nm.layer_norm(x, params["final.ln_gamma"],
                                      params["final.ln_beta"])
    out = nm.matmul(y, params["proj.w"]) + params["proj.b"]
    cache = (z.shape, block_caches, final_ln_cache, y)
    return out, cache


def backward(params, config: AdapterConfig, cache, d_out: np.ndarray):
    """Exact gradients of a cached forward.

    Returns ``(d_z, grads)`` where ``grads`` maps every parameter name to an
    array of matching shape.
    """
    if config.identity:
        kind, in_shape = cache
        if kind != "identity" or d_out.shape != in_shape:
            raise ValueError("cache does not match this identity adapter")
        return d_out, {}
    in_shape, block_caches, final_ln_cache, y = cache
    if len(block_caches) != config.depth:
        raise ValueError("cache depth does not match the config")
    if d_out.shape != (in_shape[0], config.shared_dim):
        raise ValueError(
            f"gradient shape {d_out.shape} does not match cached forward "
            f"({in_shape[0]} x {config.shared_dim})"
        )
    grads: dict[str, np.ndarray] = {}
    d_y, grads["proj.w"] = nm.matmul_backward(d_out, y, params["proj.w"])
    grads["proj.b"] = d_out.sum(axis=0, dtype=np.float64).astype(d_out.dtype)
    d_x, grads["final.ln_gamma"], grads["final.ln_beta"] = nm.layer_norm_backward(
        d_y, final_ln_cache)
    for i in reversed(range(config.depth)):
        ln_cache, t, u, mask, dropped = block_caches[i]
        d_drop, grads[f"blocks.{i}.w_out"] = nm.matmul_backward(
            d_x, dropped, params[f"blocks.{i}.w_out"])
        grads[f"blocks.{i}.b_out"] = d_x.sum(axis=0, dtype=np.float64).astype(d_x.dtype)
        d_g = nm.dropout_backward(d_drop, mask, config.dropout_p)
        d_u = nm.gelu_backward(d_g, u)
        d_t, grads[f"blocks.{i}.w_in"] = nm.matmul_backward(
            d_u, t, params[f"blocks.{i}.w_in"])
        grads[f"blocks.{i}.b_in"] = d_u.sum(axis=0, dtype=np.float64).astype(d_u.dtype)
        d_ln, grads[f"blocks.{i}.ln_gamma"], grads[f"blocks.{i}.ln_beta"] = \
            nm.layer_norm_backward(d_t, ln_cache)
        # residual: gradient flows through both the skip and the block body
        d_x = d_x + d_ln
    return d_x, grads
