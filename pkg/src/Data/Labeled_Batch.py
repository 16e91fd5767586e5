from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.Engine.Network import one_hot


class LabeledBatch(BaseModel):
    """Images [B, C, H, W] in [0, 1] with integer labels and optional soft targets [B, N]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    soft_targets: Optional[np.ndarray] = None

    @field_validator("images", "soft_targets", mode="before")
    @classmethod
    def _as_float(cls, value):
        return None if value is None else np.asarray(value, dtype=np.float64)

    @field_validator("labels", mode="before")
    @classmethod
    def _as_int(cls, value):
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "LabeledBatch":
        b = self.images.shape[0]
        if self.images.ndim != 4:
            raise ValueError(f"images must be [B, C, H, W], got shape {self.images.shape}")
        if self.labels.shape != (b,):
            raise ValueError(f"{len(self.labels)} labels for {b} images")
        if b and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if b and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        if self.soft_targets is not None:
            if self.soft_targets.shape != (b, self.n_classes):
                raise ValueError(f"soft_targets must be [{b}, {self.n_classes}], got {self.soft_targets.shape}")
            if b and np.abs(self.soft_targets.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValueError("soft_targets rows must sum to 1")
        return self

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def targets(self) -> np.ndarray:
        """Soft targets when attached, one-hot labels otherwise."""
        return self.soft_targets if self.soft_targets is not None else one_hot(self.labels, self.n_classes)

    def subset(self, indices: Sequence[int]) -> "LabeledBatch":
        idx = np.asarray(indices, dtype=np.int64)
        soft = None if self.soft_targets is None else self.soft_targets[idx]
        return LabeledBatch(images=self.images[idx], labels=self.labels[idx], n_classes=self.n_classes, soft_targets=soft)

    @classmethod
    def concat(cls, batches: Iterable["LabeledBatch"]) -> "LabeledBatch":
        batches = list(batches)
        if not batches:
            raise ValueError("Nothing to concatenate")
        soft = None
        if all(b.soft_targets is not None for b in batches):
            soft = np.concatenate([b.soft_targets for b in batches])
        return cls(
            images=np.concatenate([b.images for b in batches]),
            labels=np.concatenate([b.labels for b in batches]),
            n_classes=batches[0].n_classes,
            soft_targets=soft,
        )


def soft_labels(labels: Sequence[int], n_classes: int, alpha_sl: float) -> np.ndarray:
    """Label smoothing: 1 - (N-1)/N * alpha at the true class, alpha/N elsewhere."""
    if not 0.0 <= alpha_sl <= 1.0:
        raise ValueError(f"alpha_sl must lie in [0, 1] (got {alpha_sl})")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise ValueError(f"Invalid class id {int(bad)} for {n_classes} classes")
    off = alpha_sl / n_classes
    on = 1.0 - (n_classes - 1) / n_classes * alpha_sl
    out = np.full((labels.size, n_classes), off)
    out[np.arange(labels.size), labels] = on
    return out
