"""Cross-modal retrieval evaluation: Recall@K in both directions.

Queries from one modality are embedded into the shared space and ranked
against all candidate embeddings of the other modality by cosine similarity
(a dot product, since rows are unit-norm).  A query scores at K if any of its
positive candidates appears in the top K.  Positives are supplied as an
explicit mapping so a query may have several correct candidates (e.g. five
captions describing one image).

Ties are broken by lower candidate index.  Concretely, the rank of candidate
``c`` for a query is::

    #(candidates with higher score) + #(equal score at a lower index)

which makes results deterministic and independent of how the similarity
matrix is tiled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter as ad
from . import numerics as nm


@dataclass
class RecallReport:
    """Recall@K for one query direction."""

    direction: str
    recall_at: dict[int, float]
    n_queries: int

    def __post_init__(self):
        ks = list(self.recall_at)
        vals = [self.recall_at[k] for k in ks]
        assert ks == sorted(ks)
        assert all(0.0 <= v <= 1.0 for v in vals)


def embed_all(params, config: ad.AdapterConfig, latents: np.ndarray,
              batch_rows: int = 8192) -> np.ndarray:
    """Eval-mode adapter forward plus row normalization, in bounded slabs."""
    if latents.ndim != 2 or latents.shape[1] != config.input_dim:
        raise ValueError(
            f"latents are {latents.shape}, adapter expects B x {config.input_dim}"
        )
    if batch_rows < 1:
        raise ValueError("batch_rows must be positive")
    chunks = []
    for start in range(0, latents.shape[0], batch_rows):
        out = ad.forward(params, config, latents[start : start + batch_rows],
                         mode="eval")
        unit, _ = nm.l2_normalize(out)
        chunks.append(unit.astype(np.float32))
    return np.concatenate(chunks, axis=0)


def _check_positives(positives, n_queries: int, n_candidates: int):
    cleaned = []
    if len(positives) != n_queries:
        raise ValueError(
            f"positives cover {len(positives)} queries, expected {n_queries}"
        )
    for q in range(n_queries):
        pos = np.atleast_1d(np.asarray(positives[q], dtype=np.int64))
        if pos.size == 0:
            raise ValueError(f"query {q} has no positive candidates")
        if np.any(pos < 0) or np.any(pos >= n_candidates):
            raise ValueError(f"query {q} has out-of-range positives")
        cleaned.append(pos)
    return cleaned


def recall_at_k(emb_q: np.ndarray, emb_c: np.ndarray, positives,
                ks, direction: str = "x_to_y",
                tile_rows: int = 1024) -> RecallReport:
    """Fraction of queries whose best-ranked positive lands in the top K.

    ``positives`` maps query index -> iterable of candidate indices.  ``ks``
    must be strictly increasing positive integers.
    """
    ks = [int(k) for k in ks]
    if not ks or any(k < 1 for k in ks) or ks != sorted(set(ks)):
        raise ValueError("ks must be strictly increasing positive integers")
    if emb_q.ndim != 2 or emb_c.ndim != 2 or emb_q.shape[1] != emb_c.shape[1]:
        raise ValueError("query and candidate embeddings must share a dimension")
    n_q, n_c = emb_q.shape[0], emb_c.shape[0]
    pos = _check_positives(positives, n_q, n_c)

    cand_idx = np.arange(n_c)
    best_rank = np.empty(n_q, dtype=np.int64)
    qc = emb_c.astype(np.float64)
    for start in range(0, n_q, tile_rows):
        stop = min(start + tile_rows, n_q)
        sims = emb_q[start:stop].astype(np.float64) @ qc.T
        for i in range(stop - start):
            row = sims[i]
            ranks = []
            for p in pos[start + i]:
                s_p = row[p]
                rank = int(np.count_nonzero(row > s_p))
                rank += int(np.count_nonzero((row == s_p) & (cand_idx < p)))
                ranks.append(rank)
            best_rank[start + i] = min(ranks)

    recall = {k: float(np.count_nonzero(best_rank < k)) / n_q for k in ks}
    return RecallReport(direction=direction, recall_at=recall, n_queries=n_q)


def identity_positives(n: int):
    """Positives mapping for an index-aligned paired store: q -> {q}."""
    return [[i] for i in range(n)]


def evaluate_pair(params_x, cfg_x: ad.AdapterConfig, params_y,
                  cfg_y: ad.AdapterConfig, z_x: np.ndarray, z_y: np.ndarray,
                  ks=(1, 5, 10)) -> dict[str, RecallReport]:
    """Both retrieval directions on an index-aligned evaluation pair set."""
    if z_x.shape[0] != z_y.shape[0]:
        raise ValueError("evaluation modalities disagree on row count")
    emb_x = embed_all(params_x, cfg_x, z_x)
    emb_y = embed_all(params_y, cfg_y, z_y)
    ident = identity_positives(z_x.shape[0])
    return {
        "x_to_y": recall_at_k(emb_x, emb_y, ident, ks, direction="x_to_y"),
        "y_to_x": recall_at_k(emb_y, emb_x, ident, ks, direction="y_to_x"),
    }


def report_to_dict(report: RecallReport, checkpoint_id: str = "") -> dict:
    """Plain-JSON form of a report, ready for serialization."""
    ks = list(report.recall_at)
    return {
        "direction": report.direction,
        "ks": ks,
        "recalls": [report.recall_at[k] for k in ks],
        "n_queries": report.n_queries,
        "checkpoint_id": checkpoint_id,
    }
