"""fusealign: multimodal fusion of pre-computed unimodal latents.

Frozen encoders produce latent vectors once; this package trains lightweight
adapter networks that map those latents into a shared embedding space using a
latent mixup augmentation and a symmetric contrastive objective, evaluates the
alignment via cross-modal retrieval, and selects diverse dataset subsets with
greedy k-DPP inference.
"""

__version__ = "0.1.0"
