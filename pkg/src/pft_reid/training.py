"""SGD-momentum training loop with warmup + cosine decay.

Runs are fully deterministic for a given seed: the seed is split into one
stream for parameter init and one for batch sampling / augmentation, so the
same config always yields the same checkpoint bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import ModelConfig, TrainConfig
from .data import AugmentFlags, augment, dataset_mean
from .errors import ConfigError, DivergenceError
from .losses import id_loss, triplet_loss
from .model import PFTModel


def cosine_lr(step, cfg: TrainConfig):
    """Learning rate at a step: linear warmup to base_lr, then half-cosine
    decay to zero over the remaining steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = cfg.resolved_warmup
    if step < warmup:
        return cfg.base_lr * (step + 1) / warmup
    span = max(cfg.total_steps - warmup, 1)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / span))


def sgd_step(params, velocities, lr, momentum=0.9, weight_decay=1e-4):
    """Classic momentum update with L2 decay folded into the gradient:
    v <- momentum*v + g + weight_decay*w ; w <- w - lr*v."""
    for name, tensor in params:
        if tensor.grad is None:
            continue
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(tensor.data)
            velocities[name] = v
        v *= momentum
        v += tensor.grad + weight_decay * tensor.data
        tensor.data -= lr * v


def sample_identity_batch(rng, label_to_indices, ids_per_batch, instances_per_id):
    """P x K sampler: pick P identities, then K records of each (with
    replacement only when an identity has fewer than K records)."""
    labels = sorted(label_to_indices)
    if len(labels) < 2:
        raise ConfigError("training needs at least 2 identities for the batch sampler")
    p = min(ids_per_batch, len(labels))
    chosen = rng.choice(len(labels), size=p, replace=False)
    batch = []
    for li in chosen:
        pool = label_to_indices[labels[li]]
        replace = len(pool) < instances_per_id
        picks = rng.choice(len(pool), size=instances_per_id, replace=replace)
        batch.extend(pool[i] for i in picks)
    return batch


@dataclass
class TrainResult:
    model: PFTModel
    history: list = field(default_factory=list)
    label_mapping: dict = field(default_factory=dict)


def batch_loss(model, images, labels, train_cfg: TrainConfig):
    """Total loss over active heads: cross-entropy plus (when enabled)
    batch-hard triplet per head. Returns (loss tensor, per-head floats)."""
    per_image = [model.forward(img) for img in images]
    loss = None
    per_head = []
    for name in model.config.head_names:
        feats = ad.concat([out.features[name] for out in per_image], axis=0)
        head_total = id_loss(model.head_logits(name, feats, training=True), labels)
        if train_cfg.use_triplet:
            head_total = head_total + triplet_loss(
                feats, labels, margin=train_cfg.triplet_margin
            )
        per_head.append(head_total.item())
        loss = head_total if loss is None else loss + head_total
    return loss, per_head


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, records, callback=None):
    """Train a fresh model on the given records.

    Labels are remapped to a dense [0, K) range (mapping returned in the
    result). Raises :class:`DivergenceError` with the step number if the loss
    goes non-finite.
    """
    if not records:
        raise ConfigError("training dataset is empty")
    raw_ids = sorted({r.person_id for r in records})
    mapping = {pid: i for i, pid in enumerate(raw_ids)}
    labels_all = np.array([mapping[r.person_id] for r in records])
    label_to_indices = {
        lab: np.flatnonzero(labels_all == lab) for lab in range(len(raw_ids))
    }

    seed_seq = np.random.SeedSequence(train_cfg.seed)
    init_seq, sample_seq = seed_seq.spawn(2)
    model = PFTModel(model_cfg, num_classes=len(raw_ids), seed=init_seq)
    rng = np.random.default_rng(sample_seq)

    flags = AugmentFlags() if train_cfg.augment else AugmentFlags(False, False, False)
    fill = dataset_mean(records)
    velocities = {}
    history = []

    for step in range(train_cfg.total_steps):
        batch_idx = sample_identity_batch(
            rng, label_to_indices, train_cfg.ids_per_batch, train_cfg.instances_per_id
        )
        images = [augment(records[i], rng, flags, fill).image for i in batch_idx]
        labels = labels_all[batch_idx]

        model.zero_grad()
        loss, per_head = batch_loss(model, images, labels, train_cfg)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise DivergenceError(step)
        loss.backward()

        lr = cosine_lr(step, train_cfg)
        sgd_step(
            model.named_params(),
            velocities,
            lr,
            momentum=train_cfg.momentum,
            weight_decay=train_cfg.weight_decay,
        )
        entry = {"step": step, "lr": lr, "loss": loss_value, "loss_per_head": per_head}
        history.append(entry)
        if callback is not None:
            callback(entry)

    return TrainResult(model=model, history=history, label_mapping=mapping)
