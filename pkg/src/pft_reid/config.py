"""Geometry and hyperparameter configuration.

``compute_grid`` is the bare patch-grid arithmetic; ``PatchConfig`` layers the
divisibility constraints the sequence modules need (quartering and twelve-way
slicing) on top of it, so an invalid geometry is rejected at construction and
never at run time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

ENHANCE_INITS = ("constant", "gaussian", "uniform", "laplace", "exponential")


def compute_grid(height, width, patch, stride):
    """Grid extents (n_h, n_w, n) of a strided square-window tiling."""
    if patch < 1 or patch > height or patch > width:
        raise ConfigError(
            f"patch size {patch} must be in [1, min(height={height}, width={width})]"
        )
    if stride < 1:
        raise ConfigError(f"stride {stride} must be >= 1")
    n_h = (height + stride - patch) // stride
    n_w = (width + stride - patch) // stride
    return n_h, n_w, n_h * n_w


@dataclass(frozen=True)
class PatchConfig:
    """Image/patch geometry and embedding width."""

    height: int = 96
    width: int = 48
    channels: int = 3
    patch: int = 8
    stride: int = 8
    dim: int = 64

    def __post_init__(self):
        for name in ("height", "width", "channels", "patch", "stride", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        n_h, n_w, n = compute_grid(self.height, self.width, self.patch, self.stride)
        if n % 4 != 0 or n % 12 != 0:
            raise ConfigError(
                f"patch count N={n} (grid {n_h}x{n_w}) must be divisible by 4 and 12 "
                f"(N%4={n % 4}, N%12={n % 12}); required by sequence grouping and slicing"
            )

    @property
    def grid_h(self):
        return compute_grid(self.height, self.width, self.patch, self.stride)[0]

    @property
    def grid_w(self):
        return compute_grid(self.height, self.width, self.patch, self.stride)[1]

    @property
    def num_patches(self):
        return compute_grid(self.height, self.width, self.patch, self.stride)[2]

    @property
    def patch_len(self):
        """Flattened window length C*P*P (the patch-projection input width)."""
        return self.channels * self.patch * self.patch


@dataclass(frozen=True)
class ModelConfig:
    """Backbone architecture plus the three module switches."""

    patch: PatchConfig = PatchConfig()
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    use_pfde: bool = True
    use_frm: bool = True
    use_ssm: bool = True
    beta: float = 1.0
    enhance_init: str = "constant"
    ssm_columnwise: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.patch.dim % self.heads != 0:
            raise ConfigError(
                f"embedding width {self.patch.dim} must divide evenly into {self.heads} heads"
            )
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ConfigError(f"beta must be finite and positive, got {self.beta}")
        if self.enhance_init not in ENHANCE_INITS:
            raise ConfigError(
                f"enhance_init {self.enhance_init!r} not one of {ENHANCE_INITS}"
            )
        if self.ssm_columnwise and self.patch.grid_w % 3 != 0:
            raise ConfigError(
                f"column-wise slicing needs grid width divisible by 3, got {self.patch.grid_w}"
            )

    @property
    def head_names(self):
        if self.use_ssm:
            return ("global", "left", "middle", "right", "glf")
        return ("global",)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule, and sampling hyperparameters."""

    batch_size: int = 48
    instances_per_id: int = 4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    base_lr: float = 0.008
    total_steps: int = 300
    warmup_steps: int | None = None
    triplet_margin: float = 0.3
    use_triplet: bool = True
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "instances_per_id"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be non-negative, got {self.total_steps}")
        for name in ("momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.triplet_margin < 0:
            raise ConfigError(f"triplet_margin must be non-negative, got {self.triplet_margin}")
        if self.batch_size % self.instances_per_id != 0:
            raise ConfigError(
                f"batch_size {self.batch_size} must be a multiple of "
                f"instances_per_id {self.instances_per_id}"
            )
        if self.warmup_steps is not None and not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} must lie in [0, total_steps={self.total_steps}]"
            )

    @property
    def ids_per_batch(self):
        return self.batch_size // self.instances_per_id

    @property
    def resolved_warmup(self):
        """Warmup length; defaults to 10% of the schedule."""
        if self.warmup_steps is not None:
            return self.warmup_steps
        return self.total_steps // 10
