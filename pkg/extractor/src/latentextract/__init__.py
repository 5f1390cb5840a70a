"""latentextract: turn frozen pre-trained encoders into latent stores.

Runs a unimodal encoder (a model-hub checkpoint or a deterministic builtin)
over one modality of a paired listing and writes the pooled penultimate-layer
vectors in the binary latent-store format, so alignment training never has to
touch raw images, audio, or text again. Extraction is a one-time cost; the
encoder is discarded afterwards and never persisted.
"""

from .encoders import EncoderError, build_encoder
from .extract import (ExtractError, ExtractResult, ExtractSpec, extract,
                      pair_and_manifest)
from .listing import PairListing, load_pair_listing, write_pair_listing

__version__ = "0.1.0"

__all__ = [
    "EncoderError",
    "ExtractError",
    "ExtractResult",
    "ExtractSpec",
    "PairListing",
    "build_encoder",
    "extract",
    "load_pair_listing",
    "pair_and_manifest",
    "write_pair_listing",
    "__version__",
]
