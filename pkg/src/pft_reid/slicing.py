"""Spatial slicing of the patch sequence (SSM).

The last-layer patch rows are cut into twelve contiguous equal slices. Slices
1,4,7,10 / 2,5,8,11 / 3,6,9,12 (1-indexed) concatenate into left / middle /
right branch sequences, and the four contiguous quarters sum elementwise into
the fused global-local sequence (GLF). Each branch gets the incoming class
token prepended and runs through a single shared encoder block; the class row
of each result is that branch's feature.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

NUM_SLICES = 12
BRANCH_SLICES = {"left": (0, 3, 6, 9), "middle": (1, 4, 7, 10), "right": (2, 5, 8, 11)}


def slice_boundaries(n):
    """Row ranges [(start, stop), ...] of the twelve contiguous slices."""
    if n < NUM_SLICES or n % NUM_SLICES != 0:
        raise ValueError(f"slicing needs a patch count divisible by {NUM_SLICES}, got {n}")
    step = n // NUM_SLICES
    return [(g * step, (g + 1) * step) for g in range(NUM_SLICES)]


def slice_sequence(tokens):
    """Cut a class-free [N, D] sequence into the twelve slices."""
    bounds = slice_boundaries(tokens.shape[0])
    return [tokens[a:b] for a, b in bounds]


def group_branches(slices):
    """Concatenate slices into the (left, middle, right) branch sequences."""
    if len(slices) != NUM_SLICES:
        raise ValueError(f"expected {NUM_SLICES} slices, got {len(slices)}")
    return tuple(
        ad.concat([slices[i] for i in BRANCH_SLICES[name]], axis=0)
        for name in ("left", "middle", "right")
    )


def columnwise_branch_indices(cfg):
    """Patch indices of the left/middle/right image thirds (column bands)."""
    n_h, n_w = cfg.grid_h, cfg.grid_w
    if n_w % 3 != 0:
        raise ValueError(f"column-wise grouping needs grid width divisible by 3, got {n_w}")
    third = n_w // 3
    out = []
    for band in range(3):
        cols = range(band * third, (band + 1) * third)
        out.append(np.array([r * n_w + c for r in range(n_h) for c in cols], dtype=np.intp))
    return tuple(out)


def group_branches_columnwise(tokens, cfg):
    """(left, middle, right) taken as true image-column bands of the grid."""
    return tuple(ad.take_rows(tokens, idx) for idx in columnwise_branch_indices(cfg))


def fuse_quarters(tokens, class_token):
    """GLF: class token prepended to the elementwise sum of the four quarters."""
    n = tokens.shape[0]
    if n < 4 or n % 4 != 0:
        raise ValueError(f"quarter fusion needs a patch count divisible by 4, got {n}")
    q = n // 4
    fused = tokens[0:q] + tokens[q : 2 * q] + tokens[2 * q : 3 * q] + tokens[3 * q : 4 * q]
    return ad.concat([class_token, fused], axis=0)


def spatial_branches(seq, block, columnwise=False, cfg=None):
    """Build and encode the four branch sequences from a class-token sequence.

    Returns ``{name: (class_feature [1, D], encoded sequence)}`` for left,
    middle, right, and glf, all encoded by the same (parameter-tied) block.
    """
    cls = seq[0:1]
    tokens = seq[1:]
    if columnwise:
        if cfg is None:
            raise ValueError("column-wise grouping needs the patch config")
        left, middle, right = group_branches_columnwise(tokens, cfg)
    else:
        left, middle, right = group_branches(slice_sequence(tokens))
    branches = {
        "left": ad.concat([cls, left], axis=0),
        "middle": ad.concat([cls, middle], axis=0),
        "right": ad.concat([cls, right], axis=0),
        "glf": fuse_quarters(tokens, cls),
    }
    out = {}
    for name, branch_seq in branches.items():
        encoded = block.forward(branch_seq)
        out[name] = (encoded[0:1], encoded)
    return out
