"""Transformer backbone: patch embedding, pre-norm encoder blocks, rollout maps.

Sequences are [T, D] tensors; when a class token is present it sits at row 0.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02


def extract_windows(image, cfg):
    """Flatten every strided P x P window into a row of a [N, C*P*P] array.

    Window order is row-major over the grid; within a window the layout is
    channel-major then row-major, matching a plain ``window.reshape(-1)``.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.shape != (cfg.channels, cfg.height, cfg.width):
        raise ValueError(
            f"image shape {img.shape} does not match config "
            f"({cfg.channels}, {cfg.height}, {cfg.width})"
        )
    n_h, n_w, n = cfg.grid_h, cfg.grid_w, cfg.num_patches
    p, s = cfg.patch, cfg.stride
    sc, sh, sw = img.strides
    windows = np.lib.stride_tricks.as_strided(
        img,
        shape=(n_h, n_w, cfg.channels, p, p),
        strides=(s * sh, s * sw, sc, sh, sw),
        writeable=False,
    )
    # (n_h, n_w, c, p, p) -> rows ordered grid-row-major, entries c-major
    return np.ascontiguousarray(windows).reshape(n, cfg.patch_len)


def patch_embed(image, cfg, weight, bias):
    """Project every image patch to a D-dim row; returns a [N, D] tensor."""
    windows = extract_windows(image, cfg)
    if weight.shape != (cfg.patch_len, cfg.dim):
        raise ValueError(
            f"projection weight {weight.shape} does not match ({cfg.patch_len}, {cfg.dim})"
        )
    return ad.add_bias(ad.matmul(Tensor(windows), weight), bias)


def glorot(rng, rows, cols):
    """Fan-scaled normal init.

    SGD at the recipe's fixed learning rate needs activations at unit-ish
    scale from the start; the common 0.02-std transformer fill (tuned for
    adaptive optimizers and long schedules) provably stalls the desk-scale
    training runs.
    """
    std = math.sqrt(2.0 / (rows + cols))
    return Tensor(rng.normal(0.0, std, size=(rows, cols)), requires_grad=True)


class EncoderBlock:
    """Pre-norm multi-head self-attention block with a GELU MLP."""

    def __init__(self, dim, heads, mlp_ratio=4, rng=None):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} must be divisible by heads {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        hidden = dim * mlp_ratio

        def dense(rows, cols):
            return glorot(rng, rows, cols)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        self.ln1_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln1_bias = zeros(dim)
        self.wq, self.bq = dense(dim, dim), zeros(dim)
        # no key bias: softmax scores are invariant to a shared key offset,
        # so the parameter would be gradient-dead
        self.wk = dense(dim, dim)
        self.wv, self.bv = dense(dim, dim), zeros(dim)
        self.wo, self.bo = dense(dim, dim), zeros(dim)
        self.ln2_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln2_bias = zeros(dim)
        self.mlp_w1, self.mlp_b1 = dense(dim, hidden), zeros(hidden)
        self.mlp_w2, self.mlp_b2 = dense(hidden, dim), zeros(dim)

    def named_params(self):
        yield "ln1.gain", self.ln1_gain
        yield "ln1.bias", self.ln1_bias
        yield "attn.wq", self.wq
        yield "attn.bq", self.bq
        yield "attn.wk", self.wk
        yield "attn.wv", self.wv
        yield "attn.bv", self.bv
        yield "attn.wo", self.wo
        yield "attn.bo", self.bo
        yield "ln2.gain", self.ln2_gain
        yield "ln2.bias", self.ln2_bias
        yield "mlp.w1", self.mlp_w1
        yield "mlp.b1", self.mlp_b1
        yield "mlp.w2", self.mlp_w2
        yield "mlp.b2", self.mlp_b2

    def forward(self, x, attn_sink=None):
        """Apply the block to a [T, D] sequence.

        When ``attn_sink`` is a list, the head-averaged [T, T] attention matrix
        is appended to it (forward values only, no gradient tracking).
        """
        y = ad.layer_norm(x, self.ln1_gain, self.ln1_bias)
        q = ad.add_bias(ad.matmul(y, self.wq), self.bq)
        k = ad.matmul(y, self.wk)
        v = ad.add_bias(ad.matmul(y, self.wv), self.bv)
        inv_scale = 1.0 / math.sqrt(self.head_dim)
        outs = []
        attn_sum = None
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh, kh, vh = q[:, lo:hi], k[:, lo:hi], v[:, lo:hi]
            scores = ad.matmul(qh, ad.transpose(kh)) * inv_scale
            attn = ad.softmax(scores, axis=1)
            if attn_sink is not None:
                attn_sum = attn.data.copy() if attn_sum is None else attn_sum + attn.data
            outs.append(ad.matmul(attn, vh))
        if attn_sink is not None:
            attn_sink.append(attn_sum / self.heads)
        mixed = ad.add_bias(ad.matmul(ad.concat(outs, axis=1), self.wo), self.bo)
        x = x + mixed
        z = ad.layer_norm(x, self.ln2_gain, self.ln2_bias)
        m = ad.gelu(ad.add_bias(ad.matmul(z, self.mlp_w1), self.mlp_b1))
        m = ad.add_bias(ad.matmul(m, self.mlp_w2), self.mlp_b2)
        return x + m


def encode(seq, blocks, attn_sink=None):
    """Run a class-token sequence (position embedding already added) through
    the given blocks; an empty block list is the identity."""
    for block in blocks:
        seq = block.forward(seq, attn_sink=attn_sink)
    return seq


def attention_rollout(attentions, cfg):
    """Fold per-layer attention into one class-to-patch heatmap on the grid.

    Each layer contributes (A + I) / 2 (rows stay stochastic because A is);
    the layer matrices are multiplied in order, the class-token row over the
    patch positions is reshaped to the grid and normalized to sum 1. A zero
    class row (e.g. pure identity attention) falls back to the uniform map.
    """
    n_h, n_w, n = cfg.grid_h, cfg.grid_w, cfg.num_patches
    if not attentions:
        raise ValueError("attention_rollout: no attention matrices given")
    t = attentions[0].shape[0]
    if t != n + 1:
        raise ValueError(f"attention_rollout: expected {n + 1} tokens, got {t}")
    eye = np.eye(t)
    rolled = eye
    for a in attentions:
        if a.shape != (t, t):
            raise ValueError(f"attention_rollout: inconsistent attention shape {a.shape}")
        rolled = rolled @ ((a + eye) / 2.0)
    row = rolled[0, 1:]
    total = row.sum()
    if total <= 1e-300:
        heat = np.full(n, 1.0 / n)
    else:
        heat = row / total
    return heat.reshape(n_h, n_w)
