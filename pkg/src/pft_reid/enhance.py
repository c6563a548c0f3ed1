"""Learnable full-dimension enhancement of the patch sequence (PFDE).

One [N, D] tensor, shape-matched to the embedded patch sequence, multiplied
in elementwise. Initialized to a constant so the untrained network is left
bit-for-bit unchanged; the alternative distribution initializers exist only
to reproduce the qualitative finding that they destabilize training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class EnhancementTensor:
    """Learnable [N, D] strengthening tensor and the coefficient it started at."""

    values: Tensor
    beta: float


def init_enhancement(cfg, beta=1.0, init="constant", rng=None):
    """Create the enhancement tensor for a patch geometry.

    ``beta`` must be finite and positive: a zero fill would annihilate the
    whole sequence. ``init`` other than "constant" draws from the named
    distribution centered/scaled around beta (experiment use only).
    """
    if not (np.isfinite(beta) and beta > 0.0):
        raise ConfigError(f"enhancement beta must be finite and positive, got {beta}")
    n, d = cfg.num_patches, cfg.dim
    if init == "constant":
        values = np.full((n, d), float(beta))
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        if init == "gaussian":
            values = rng.normal(beta, 0.1, size=(n, d))
        elif init == "uniform":
            values = rng.uniform(beta - 0.1, beta + 0.1, size=(n, d))
        elif init == "laplace":
            values = rng.laplace(beta, 0.1, size=(n, d))
        elif init == "exponential":
            values = rng.exponential(beta, size=(n, d))
        else:
            raise ConfigError(f"unknown enhancement init {init!r}")
    return EnhancementTensor(Tensor(values, requires_grad=True), float(beta))


def apply_enhancement(tokens, enhancement):
    """Hadamard product of the [N, D] patch sequence with the enhancement
    tensor; gradient flows to both operands."""
    return ad.mul(tokens, enhancement.values)
