"""
Desk-scale synthetic image task.

Each class owns a position on a ring around the image centre; an example of
that class is a Gaussian bump at the position (with jitter) on a flat
background plus pixel noise. An optional checkerboard "texture" whose sign
encodes the class parity adds a low-amplitude, perfectly predictive feature
that a budget-epsilon attacker can erase.
"""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.Auxiliary.Seeding import derive_rng
from src.Data.Labeled_Batch import LabeledBatch


class BlobSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_classes: int = Field(default=2, ge=2)
    per_class: int = Field(default=200, ge=1)
    "Training examples per class"
    test_per_class: int = Field(default=100, ge=1)
    image_size: int = Field(default=8, ge=4)
    channels: int = Field(default=1, ge=1)
    background: float = Field(default=0.2, ge=0.0, le=1.0)
    amplitude: float = Field(default=0.6, gt=0.0)
    bump_sigma: float = Field(default=1.2, gt=0.0)
    jitter: float = Field(default=0.5, ge=0.0)
    noise: float = Field(default=0.05, ge=0.0)
    texture_amplitude: float = Field(default=0.0, ge=0.0)
    seed: int = 0


def class_centres(spec: BlobSpec) -> np.ndarray:
    mid = (spec.image_size - 1) / 2.0
    radius = spec.image_size / 4.0
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    return np.stack([mid + radius * np.sin(angles), mid + radius * np.cos(angles)], axis=1)


def _render(spec: BlobSpec, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    centres = class_centres(spec)[labels] + rng.normal(0.0, spec.jitter, size=(len(labels), 2))
    d2 = (rows[None] - centres[:, 0, None, None]) ** 2 + (cols[None] - centres[:, 1, None, None]) ** 2
    bump = spec.amplitude * np.exp(-d2 / (2.0 * spec.bump_sigma ** 2))
    images = spec.background + np.repeat(bump[:, None], spec.channels, axis=1)
    if spec.texture_amplitude > 0:
        checker = np.where((rows + cols) % 2 == 0, 1.0, -1.0)
        sign = np.where(labels % 2 == 0, 1.0, -1.0)
        images = images + spec.texture_amplitude * sign[:, None, None, None] * checker[None, None]
    images = images + rng.normal(0.0, spec.noise, size=images.shape)
    return np.clip(images, 0.0, 1.0)


def _split(spec: BlobSpec, per_class: int, stream: int) -> LabeledBatch:
    rng = derive_rng(spec.seed, stream)
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    labels = labels[rng.permutation(labels.size)]
    return LabeledBatch(images=_render(spec, labels, rng), labels=labels, n_classes=spec.n_classes)


def make_blobs(spec: BlobSpec) -> Tuple[LabeledBatch, LabeledBatch]:
    """(train, test) drawn from independent streams of `spec.seed`."""
    return _split(spec, spec.per_class, 0), _split(spec, spec.test_per_class, 1)
