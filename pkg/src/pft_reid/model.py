"""Full occluded re-identification model.

Pipeline per image:

    patch_embed -> [enhancement] -> prepend class token -> + position embedding
    -> encoder blocks 0..L-2 -> fusion/reconstruction -> final block   (global)
                             \\-> spatial branches through the final block (x4)

The fusion/reconstruction step sits between the penultimate and final blocks
so one attention layer still mixes the reconstructed sequence; the spatial
branches tap the same penultimate output in parallel. The final encoder block
is parameter-tied across the global path and all four branches.

Every learnable tensor is registered under a stable name in creation order,
which fixes both checkpoint layout and the RNG draw sequence; the enhancement
tensor is filled with a constant (no RNG draws), so toggling it leaves all
other initial weights untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import INIT_STD, EncoderBlock, encode, glorot, patch_embed
from .config import ModelConfig
from .enhance import apply_enhancement, init_enhancement
from .errors import ConfigError
from .fusion import fuse_reconstruct
from .slicing import spatial_branches


@dataclass
class ModelOutputs:
    """Per-image forward results."""

    features: dict  # head name -> Tensor [1, D] class feature
    global_tokens: Tensor  # final global-branch sequence [(N+1), D]
    attentions: list = field(default_factory=list)  # per-layer [(N+1), (N+1)] arrays


class PFTModel:
    """Backbone plus module switches plus per-branch classifier heads."""

    def __init__(self, config: ModelConfig, num_classes, seed=0):
        if num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
        self.config = config
        self.num_classes = int(num_classes)
        cfg = config.patch
        rng = np.random.default_rng(seed)
        self._params = {}

        self.patch_weight = self._register(
            "patch_proj.weight", glorot(rng, cfg.patch_len, cfg.dim)
        )
        self.patch_bias = self._register(
            "patch_proj.bias", Tensor(np.zeros(cfg.dim), requires_grad=True)
        )

        self.enhancement = None
        if config.use_pfde:
            enh_rng = rng if config.enhance_init != "constant" else None
            self.enhancement = init_enhancement(
                cfg, beta=config.beta, init=config.enhance_init, rng=enh_rng
            )
            self._register("enhance.values", self.enhancement.values)

        self.cls_token = self._register(
            "cls_token", Tensor(np.zeros((1, cfg.dim)), requires_grad=True)
        )
        self.pos_embed = self._register(
            "pos_embed",
            Tensor(
                rng.normal(0.0, INIT_STD, size=(cfg.num_patches + 1, cfg.dim)),
                requires_grad=True,
            ),
        )

        self.blocks = []
        for i in range(config.depth):
            block = EncoderBlock(cfg.dim, config.heads, config.mlp_ratio, rng=rng)
            for name, tensor in block.named_params():
                self._register(f"blocks.{i}.{name}", tensor)
            self.blocks.append(block)

        # terminal norm of the pre-norm stack; without it class features stay
        # at init scale and the classifier heads barely move
        self.final_gain = self._register(
            "final_norm.gain", Tensor(np.ones(cfg.dim), requires_grad=True)
        )
        self.final_bias = self._register(
            "final_norm.bias", Tensor(np.zeros(cfg.dim), requires_grad=True)
        )

        # per-head batch-norm neck (stats over the batch) before the linear
        # classifier; retrieval uses the post-neck feature, the triplet loss
        # the raw one. Running statistics are buffers, not SGD parameters.
        self.heads = {}
        self.necks = {}
        self._buffers = {}
        for name in config.head_names:
            gain = self._register(
                f"heads.{name}.bn_gain", Tensor(np.ones(cfg.dim), requires_grad=True)
            )
            shift = self._register(
                f"heads.{name}.bn_bias", Tensor(np.zeros(cfg.dim), requires_grad=True)
            )
            w = self._register(
                f"heads.{name}.weight",
                Tensor(rng.normal(0.0, INIT_STD, size=(cfg.dim, self.num_classes)),
                       requires_grad=True),
            )
            b = self._register(
                f"heads.{name}.bias", Tensor(np.zeros(self.num_classes), requires_grad=True)
            )
            mean = self._buffer(f"heads.{name}.bn_running_mean", np.zeros(cfg.dim))
            var = self._buffer(f"heads.{name}.bn_running_var", np.ones(cfg.dim))
            self.heads[name] = (w, b)
            self.necks[name] = {"gain": gain, "bias": shift, "mean": mean, "var": var}

    # ---- parameter registry ----

    def _register(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def _buffer(self, name, array):
        if name in self._buffers or name in self._params:
            raise ValueError(f"duplicate state name {name!r}")
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        return name

    def named_params(self):
        return self._params.items()

    def param_count(self):
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self):
        out = {name: t.data.copy() for name, t in self._params.items()}
        out.update({name: arr.copy() for name, arr in self._buffers.items()})
        return out

    def load_state_dict(self, state):
        known = set(self._params) | set(self._buffers)
        missing = sorted(known - set(state))
        unexpected = sorted(set(state) - known)
        if missing or unexpected:
            raise ValueError(
                f"state mismatch: missing {missing or 'none'}, unexpected {unexpected or 'none'}"
            )
        for name in known:
            target = self._params[name].data if name in self._params else self._buffers[name]
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint dims {value.shape} do not match "
                    f"model dims {target.shape}"
                )
            if name in self._params:
                self._params[name].data = np.ascontiguousarray(value)
                self._params[name].grad = None
            else:
                self._buffers[name] = np.ascontiguousarray(value)

    # ---- forward ----

    def forward(self, image, collect_attention=False):
        """Run one [C, H, W] image through the network.

        Returns :class:`ModelOutputs` with one class feature per active head.
        Attention maps (head-averaged, global path only) are collected when
        requested, for rollout visualization.
        """
        cfg = self.config.patch
        attn_sink = [] if collect_attention else None

        tokens = patch_embed(image, cfg, self.patch_weight, self.patch_bias)
        if self.enhancement is not None:
            tokens = apply_enhancement(tokens, self.enhancement)
        seq = ad.concat([self.cls_token, tokens], axis=0) + self.pos_embed

        mid = encode(seq, self.blocks[:-1], attn_sink=attn_sink)
        global_in = fuse_reconstruct(mid) if self.config.use_frm else mid
        global_seq = self.blocks[-1].forward(global_in, attn_sink=attn_sink)

        def class_feature(encoded_seq):
            return ad.layer_norm(encoded_seq[0:1], self.final_gain, self.final_bias)

        features = {"global": class_feature(global_seq)}
        if self.config.use_ssm:
            branch_out = spatial_branches(
                mid,
                self.blocks[-1],
                columnwise=self.config.ssm_columnwise,
                cfg=cfg,
            )
            for name in ("left", "middle", "right", "glf"):
                features[name] = class_feature(branch_out[name][1])

        return ModelOutputs(
            features=features,
            global_tokens=global_seq,
            attentions=attn_sink if attn_sink is not None else [],
        )

    BN_MOMENTUM = 0.1
    BN_EPS = 1e-5

    def apply_neck(self, name, features, training=False):
        """Batch-norm neck of one head.

        Training mode normalizes with the batch's own statistics and folds
        them into the running buffers; evaluation mode applies the stored
        running statistics (valid for single rows).
        """
        neck = self.necks[name]
        if training:
            out = ad.batch_norm(features, neck["gain"], neck["bias"], eps=self.BN_EPS)
            batch = features.data
            mu = batch.mean(axis=0)
            var = batch.var(axis=0) * (len(batch) / max(len(batch) - 1, 1))
            m = self.BN_MOMENTUM
            self._buffers[neck["mean"]] = (1 - m) * self._buffers[neck["mean"]] + m * mu
            self._buffers[neck["var"]] = (1 - m) * self._buffers[neck["var"]] + m * var
            return out
        scale = neck["gain"].data / np.sqrt(self._buffers[neck["var"]] + self.BN_EPS)
        shift = neck["bias"].data - self._buffers[neck["mean"]] * scale
        return ad.affine_rows(features, scale, shift)

    def head_logits(self, name, features, training=False):
        """Classifier logits for stacked [B, D] class features of one head."""
        w, b = self.heads[name]
        return ad.add_bias(ad.matmul(self.apply_neck(name, features, training), w), b)

    def embed(self, image):
        """Retrieval embedding: active heads' post-neck class features
        concatenated (global first, then left/middle/right/glf)."""
        out = self.forward(image)
        parts = []
        for name in self.config.head_names:
            parts.append(self.apply_neck(name, out.features[name]).data.reshape(-1))
        return np.concatenate(parts)
