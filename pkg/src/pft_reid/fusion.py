"""Sequence fusion and reconstruction (FRM).

The class token is split off, the N patch rows are quartered, the head and
tail quarters are replaced by their sums with the adjacent inner quarter, and
the sequence is reassembled at its original length:

    [class, F1, F2, F3, F4]  ->  [class, F1+F2, F2, F3, F3+F4]

The middle quarters pass through untouched (bitwise), so rows feeding a fused
quarter receive gradient both at their own position and at the fused one.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def fuse_reconstruct(seq):
    """Fuse head/tail quarters into their neighbors; class token at row 0
    passes through unchanged. Length-preserving."""
    total = seq.shape[0]
    n = total - 1
    if n < 4 or n % 4 != 0:
        raise ValueError(f"fusion needs a patch count divisible by 4, got {n}")
    q = n // 4
    cls = seq[0:1]
    f1 = seq[1 : 1 + q]
    f2 = seq[1 + q : 1 + 2 * q]
    f3 = seq[1 + 2 * q : 1 + 3 * q]
    f4 = seq[1 + 3 * q : 1 + 4 * q]
    return ad.concat([cls, f1 + f2, f2, f3, f3 + f4], axis=0)


def patch_cosine_similarity(tokens):
    """All-pairs cosine similarity between patch rows.

    Accepts a Tensor or array [N, D]; returns a symmetric [N, N] array with
    entries clipped into [-1, 1]. Norms are guarded with 1e-12 so zero rows
    yield zero similarity instead of NaN.
    """
    x = tokens.data if isinstance(tokens, Tensor) else np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"patch_cosine_similarity: expects [N, D], got shape {x.shape}")
    norms = np.sqrt((x**2).sum(axis=1))
    xn = x / np.maximum(norms, 1e-12)[:, None]
    sim = np.clip(xn @ xn.T, -1.0, 1.0)
    return sim
