"""Retrieval evaluation: feature extraction, distances, CMC and mAP.

Single-query protocol: every query ranks the gallery independently; gallery
entries sharing both the query's identity and camera are excluded first.
Ties in distance break by gallery index so reports are exactly reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RetrievalReport:
    """CMC curve, mAP, and per-query ranking diagnostics."""

    cmc: np.ndarray  # rank-k accuracy, k = 1..K
    mean_ap: float
    per_query: list = field(default_factory=list)  # ranked gallery indices per query
    excluded_queries: int = 0

    def to_json(self):
        return json.dumps(
            {
                "cmc": [float(v) for v in self.cmc],
                "map": float(self.mean_ap),
                "excluded_queries": int(self.excluded_queries),
            }
        )


def feature_extract(model, image):
    """Retrieval embedding of one image: the global class feature, plus the
    four branch class features when spatial slicing is active (D or 5D)."""
    return model.embed(image)


def extract_all(model, records):
    """Stacked embeddings plus id/camera arrays for a record list."""
    feats = np.stack([feature_extract(model, r.image) for r in records])
    ids = np.array([r.person_id for r in records])
    cams = np.array([r.camera_id for r in records])
    return feats, ids, cams


def distance_matrix(query, gallery, metric="cosine"):
    """Pairwise [q, g] distances: cosine (1 - cos sim, eps-guarded norms)
    or euclidean."""
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"distance_matrix: incompatible shapes {q.shape} vs {g.shape}")
    if metric == "cosine":
        qn = q / np.maximum(np.linalg.norm(q, axis=1), 1e-12)[:, None]
        gn = g / np.maximum(np.linalg.norm(g, axis=1), 1e-12)[:, None]
        return 1.0 - qn @ gn.T
    if metric == "euclidean":
        sq = (q**2).sum(axis=1)[:, None] + (g**2).sum(axis=1)[None, :] - 2.0 * q @ g.T
        return np.sqrt(np.maximum(sq, 0.0))
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(dist, q_ids, g_ids, q_cams, g_cams, max_rank=10, apply_exclusion=True):
    """Score a distance matrix under the single-query protocol.

    Queries left with no same-identity gallery entry after exclusion are
    dropped from the averages and counted in ``excluded_queries``.
    """
    dist = np.asarray(dist, dtype=np.float64)
    q_ids = np.asarray(q_ids)
    g_ids = np.asarray(g_ids)
    q_cams = np.asarray(q_cams)
    g_cams = np.asarray(g_cams)
    num_q, num_g = dist.shape
    if not (len(q_ids) == len(q_cams) == num_q and len(g_ids) == len(g_cams) == num_g):
        raise ValueError("evaluate: id/camera arrays do not match the distance matrix")
    max_rank = int(min(max_rank, num_g))
    if max_rank < 1:
        raise ValueError("evaluate: empty gallery")

    gallery_index = np.arange(num_g)
    cmc_sum = np.zeros(max_rank)
    ap_values = []
    per_query = []
    excluded = 0

    for qi in range(num_q):
        keep = np.ones(num_g, dtype=bool)
        if apply_exclusion:
            keep = ~((g_ids == q_ids[qi]) & (g_cams == q_cams[qi]))
        kept_idx = gallery_index[keep]
        order = np.lexsort((kept_idx, dist[qi, keep]))
        ranked = kept_idx[order]
        per_query.append(ranked)
        matches = g_ids[ranked] == q_ids[qi]
        if not matches.any():
            excluded += 1
            continue
        first = int(np.argmax(matches))
        if first < max_rank:
            cmc_sum[first:] += 1.0
        hit_pos = np.flatnonzero(matches)
        precisions = (np.arange(len(hit_pos)) + 1.0) / (hit_pos + 1.0)
        ap_values.append(precisions.mean())

    valid = num_q - excluded
    if valid == 0:
        raise ValueError("evaluate: every query was excluded (no valid gallery matches)")
    return RetrievalReport(
        cmc=cmc_sum / valid,
        mean_ap=float(np.mean(ap_values)),
        per_query=per_query,
        excluded_queries=excluded,
    )
