"""Spot-check the hand-written backward passes with finite differences.

The training stack computes every gradient analytically (no autograd), so
this demo rebuilds the loss as a plain function of a flat parameter vector
and compares the analytic gradient against central differences, layer by
layer.

    python3 demos/gradient_check_demo.py
"""

import numpy as np

import fusealign.adapter as ad
import fusealign.numerics as nm
from fusealign.objective import LossConfig, init_log_t, step_loss, symmetric_infonce

BATCH = 6
H = 1e-5


def numerical(f, flat, h=H):
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def main():
    cfg = ad.AdapterConfig(input_dim=10, shared_dim=6, depth=2,
                           expansion_factor=2, dropout_p=0.0)
    rng = np.random.default_rng(0)
    z_x = rng.normal(size=(BATCH, 10))
    z_y = rng.normal(size=(BATCH, 10))

    n = ad.param_count(cfg)
    flat = np.concatenate([
        ad.flatten_params(ad.init_params(cfg, 1), cfg),
        ad.flatten_params(ad.init_params(cfg, 2), cfg),
        [float(init_log_t(LossConfig()))],
    ]).astype(np.float64)

    def views(start):
        out, offset = {}, start
        for name, shape in ad.param_shapes(cfg).items():
            size = int(np.prod(shape))
            out[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return out

    params_x, params_y = views(0), views(n)
    log_t = flat[2 * n:].reshape(())

    def loss():
        s_x, _ = nm.l2_normalize(ad.forward(params_x, cfg, z_x))
        s_y, _ = nm.l2_normalize(ad.forward(params_y, cfg, z_y))
        return symmetric_infonce(s_x, s_y, log_t)[0].loss

    _, gx, gy, dlt = step_loss(params_x, cfg, params_y, cfg, log_t,
                               z_x, z_y, mode="eval")
    analytic = np.concatenate([ad.flatten_params(gx, cfg),
                               ad.flatten_params(gy, cfg), [dlt]])
    numeric = numerical(loss, flat)

    print(f"{flat.size} parameters checked (two adapters + temperature)\n")
    print(f"{'leaf':28s} {'max rel err':>12s}")
    offset = 0
    for side, grads in (("x", gx), ("y", gy)):
        for name, g in grads.items():
            size = int(np.prod(np.shape(g)))
            a = analytic[offset:offset + size]
            e = numeric[offset:offset + size]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(e)), 1e-3)
            print(f"{side + '.' + name:28s} {np.max(np.abs(a - e) / denom):12.2e}")
            offset += size
    denom = max(abs(analytic[-1]), abs(numeric[-1]), 1e-3)
    print(f"{'log_t':28s} {abs(analytic[-1] - numeric[-1]) / denom:12.2e}")

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    print(f"\noverall max relative error: "
          f"{np.max(np.abs(analytic - numeric) / denom):.2e}")


if __name__ == "__main__":
    main()
