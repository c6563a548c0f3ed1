"""Scikit-learn style front end.

``PFTReId`` wraps the training loop and feature extractor behind the usual
fit/transform surface so the model slots into sklearn pipelines and
hyperparameter search (``get_params``/``set_params``/``clone`` all work).

``fit`` accepts either a list of :class:`DatasetRecord` or an image array
``[n, C, H, W]`` with integer labels ``y`` (and optional ``camera_ids``);
``transform`` maps images to retrieval embeddings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import ModelConfig, PatchConfig, TrainConfig
from .data import DatasetRecord
from .evaluation import feature_extract
from .training import train


def check_image_array(X, patch: PatchConfig):
    """Validate an [n, C, H, W] float image stack against the geometry."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected images of shape [n, C, H, W], got {arr.shape}")
    want = (patch.channels, patch.height, patch.width)
    if arr.shape[1:] != want:
        raise ValueError(f"image dims {arr.shape[1:]} do not match configured {want}")
    if not np.isfinite(arr).all():
        raise ValueError("images contain non-finite values")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError("pixel values must lie in [0, 1]")
    return arr


def check_labels(y, n):
    labels = np.asarray(y)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == labels.astype(int)):
            raise ValueError("labels must be integers")
        labels = labels.astype(int)
    return labels


class PFTReId(BaseEstimator, TransformerMixin):
    """Occlusion-robust re-identification embedder with an estimator API."""

    def __init__(
        self,
        image_height=96,
        image_width=48,
        channels=3,
        patch_size=8,
        stride=8,
        embed_dim=64,
        depth=4,
        heads=4,
        mlp_ratio=4,
        use_pfde=True,
        use_frm=True,
        use_ssm=True,
        beta=1.0,
        base_lr=0.008,
        momentum=0.9,
        weight_decay=1e-4,
        batch_size=16,
        instances_per_id=4,
        total_steps=300,
        warmup_steps=None,
        triplet_margin=0.3,
        use_triplet=True,
        augment=True,
        seed=0,
    ):
        self.image_height = image_height
        self.image_width = image_width
        self.channels = channels
        self.patch_size = patch_size
        self.stride = stride
        self.embed_dim = embed_dim
        self.depth = depth
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.use_pfde = use_pfde
        self.use_frm = use_frm
        self.use_ssm = use_ssm
        self.beta = beta
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.instances_per_id = instances_per_id
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.triplet_margin = triplet_margin
        self.use_triplet = use_triplet
        self.augment = augment
        self.seed = seed

    # ---- config plumbing ----

    def _patch_config(self):
        return PatchConfig(
            height=self.image_height,
            width=self.image_width,
            channels=self.channels,
            patch=self.patch_size,
            stride=self.stride,
            dim=self.embed_dim,
        )

    def _model_config(self):
        return ModelConfig(
            patch=self._patch_config(),
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            use_pfde=self.use_pfde,
            use_frm=self.use_frm,
            use_ssm=self.use_ssm,
            beta=self.beta,
        )

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            instances_per_id=self.instances_per_id,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            base_lr=self.base_lr,
            total_steps=self.total_steps,
            warmup_steps=self.warmup_steps,
            triplet_margin=self.triplet_margin,
            use_triplet=self.use_triplet,
            augment=self.augment,
            seed=self.seed,
        )

    def _as_records(self, X, y=None, camera_ids=None, need_labels=True):
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], DatasetRecord):
            patch = self._patch_config()
            for i, r in enumerate(X):
                want = (patch.channels, patch.height, patch.width)
                if r.image.shape != want:
                    raise ValueError(f"record {i}: image dims {r.image.shape} != {want}")
            return list(X)
        arr = check_image_array(X, self._patch_config())
        n = arr.shape[0]
        if y is None:
            if need_labels:
                raise ValueError("y labels are required when X is an image array")
            labels = np.zeros(n, dtype=int)
        else:
            labels = check_labels(y, n)
        cams = np.zeros(n, dtype=int) if camera_ids is None else check_labels(camera_ids, n)
        return [
            DatasetRecord(image=arr[i], person_id=int(labels[i]), camera_id=int(cams[i]))
            for i in range(n)
        ]

    # ---- estimator surface ----

    def fit(self, X, y=None, camera_ids=None):
        """Train on labeled images; returns self."""
        records = self._as_records(X, y, camera_ids, need_labels=True)
        result = train(self._model_config(), self._train_config(), records)
        self.model_ = result.model
        self.history_ = result.history
        self.classes_ = np.array(sorted(result.label_mapping))
        self.n_features_out_ = self.embed_dim * len(self.model_.config.head_names)
        return self

    def transform(self, X):
        """Map images to retrieval embeddings of width D (or 5D with SSM)."""
        if not hasattr(self, "model_"):
            raise ValueError("PFTReId instance is not fitted yet; call fit first")
        records = self._as_records(X, need_labels=False)
        return np.stack([feature_extract(self.model_, r.image) for r in records])
