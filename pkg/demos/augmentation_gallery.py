"""Show what each latent-space augmentation scheme actually does.

Latent augmentation happens on cheap pre-computed vectors -- no pixel or
token space involved. This script prints the algebra of the pairwise mixing
scheme, the per-coefficient histogram, and the effect of the two baseline
corruptions (additive noise and random-resolution quantization).

    python3 demos/augmentation_gallery.py
"""

import numpy as np

from fusealign.augment import (MixConfig, apply_scheme, quantize_midpoints,
                               sample_beta)

RNG = np.random.default_rng(5)


def mixing_section():
    print("== pairwise mixing ==")
    z_x = RNG.normal(size=(4, 5)).astype(np.float32)
    z_y = RNG.normal(size=(4, 5)).astype(np.float32)
    mixed = apply_scheme(z_x, z_y, MixConfig(scheme="fusemix", alpha=1.0),
                         np.random.default_rng(1))
    lam = mixed.lam
    print(f"batch of 4 folds to {mixed.z_x.shape[0]} mixed pairs, "
          f"lambda = {lam:.4f} (shared by both modalities)")
    recon = lam * z_x[:2] + (1 - lam) * z_x[2:]
    print(f"max |mixed - convex combination| = "
          f"{np.max(np.abs(mixed.z_x - recon)):.2e}")

    draws = np.array([sample_beta(1.0, RNG) for _ in range(20_000)])
    hist, edges = np.histogram(draws, bins=10, range=(0, 1))
    print("\nlambda histogram at alpha=1 (uniform):")
    for count, lo in zip(hist, edges[:-1]):
        print(f"  [{lo:.1f},{lo + 0.1:.1f}) {'#' * (count // 80)}")

    sharp = np.array([sample_beta(50.0, RNG) for _ in range(20_000)])
    print(f"\nalpha=50 concentrates near 1/2: "
          f"mean={sharp.mean():.3f} std={sharp.std():.3f}")


def corruption_section():
    print("\n== baseline corruptions ==")
    z = RNG.normal(size=(512, 16)).astype(np.float32)

    noisy = apply_scheme(z, z.copy(), MixConfig(scheme="gaussian", sigma=0.05),
                         np.random.default_rng(2))
    print(f"gaussian sigma=0.05: perturbation std = "
          f"{np.std(noisy.z_x - z[:256]):.4f}")

    # bins span the batch min/max of each dimension, so the ramp goes in as
    # one 9-row column
    ramp = np.linspace(-1.0, 1.0, 9, dtype=np.float32)[:, None]
    coarse = quantize_midpoints(ramp, 2)
    print("\nquantization to 2 bins maps a ramp onto bin midpoints:")
    print("  in :", np.array2string(ramp[:, 0], precision=2))
    print("  out:", np.array2string(coarse[:, 0], precision=2))

    quant = apply_scheme(z, z.copy(),
                         MixConfig(scheme="random_quantize", bins_lo=2,
                                   bins_hi=32),
                         np.random.default_rng(3))
    levels = len(np.unique(quant.z_x[:, 0]))
    print(f"\nrandom_quantize drew a shared bin count; first dimension now "
          f"holds {levels} distinct values")


if __name__ == "__main__":
    mixing_section()
    corruption_section()
