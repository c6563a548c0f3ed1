"""Identity classification and batch-hard triplet losses."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def id_loss(logits, labels):
    """Mean cross-entropy over the batch; labels must lie in [0, K)."""
    return ad.cross_entropy(logits, labels)


def triplet_loss(features, labels, margin=0.3):
    """Batch-hard triplet loss on [B, d] features.

    For every anchor that has at least one positive, take its farthest
    positive and nearest negative (euclidean) and hinge their gap at
    ``margin``. The batch must contain at least two identities and at least
    one identity with two samples, which the P x K sampler guarantees.
    """
    labels = np.asarray(labels)
    b = features.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"triplet_loss: expected {b} labels, got shape {labels.shape}")
    same = labels[:, None] == labels[None, :]
    has_pos = (same & ~np.eye(b, dtype=bool)).any(axis=1)
    has_neg = (~same).any(axis=1)
    if not has_neg.any() or not has_pos.any():
        raise ValueError(
            "triplet_loss: degenerate batch, needs >=2 identities and an identity with >=2 samples"
        )

    dist = ad.sqrt(ad.pairwise_sqdist(features) + 1e-12)
    dm = dist.data
    anchors, pos_idx, neg_idx = [], [], []
    for a in range(b):
        if not (has_pos[a] and has_neg[a]):
            continue
        pos_mask = same[a].copy()
        pos_mask[a] = False
        pos_candidates = np.where(pos_mask)[0]
        neg_candidates = np.where(~same[a])[0]
        anchors.append(a)
        pos_idx.append(pos_candidates[np.argmax(dm[a, pos_mask])])
        neg_idx.append(neg_candidates[np.argmin(dm[a, ~same[a]])])

    d_ap = ad.gather_pairs(dist, anchors, pos_idx)
    d_an = ad.gather_pairs(dist, anchors, neg_idx)
    return ad.relu(d_ap - d_an + margin).mean()
