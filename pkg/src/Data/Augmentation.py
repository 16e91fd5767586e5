import logging
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.Attacks.Evasion_Attacks import AttackConfig, fgsm, gaussian_noise, pgd
from src.Auxiliary.Errors import ShapeMismatchError
from src.Auxiliary.Seeding import derive_rng
from src.Data.Labeled_Batch import LabeledBatch, soft_labels
from src.Engine.Network import Network

logger = logging.getLogger(__name__)

# stream keys under the per-call base seed
_ATTACK_STREAM = 0xA77A
_NOISE_STREAM = 0x6A55


class AugmentPlan(BaseModel):
    """How a training batch is expanded: geometric jitter, then adversarial and noisy copies."""

    model_config = ConfigDict(extra="forbid")

    crop_size: Optional[int] = Field(default=None, gt=0)
    "Output side length of the random crop; the image side when unset, and must equal it when set"
    crop_padding: int = Field(default=4, ge=0)
    hflip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    include_pgd: bool = True
    "Append adversarial copies crafted with `train_attack`"
    include_gaussian: bool = True
    train_attack: Literal["pgd", "fgsm"] = "pgd"
    alpha_sl: float = Field(default=0.05, ge=0.0, le=1.0)
    attack: AttackConfig = AttackConfig()
    regenerate_each_epoch: bool = True
    "Craft adversarial/noisy views per mini-batch every epoch; otherwise once per round"

    @property
    def views(self) -> int:
        return 1 + int(self.include_pgd) + int(self.include_gaussian)


def random_crop_flip(
    image: np.ndarray, crop_size: int, padding: int, hflip_prob: float, rng: np.random.Generator
) -> np.ndarray:
    """Zero-pad by `padding`, crop `crop_size` at a random offset, flip horizontally with `hflip_prob`."""
    _, height, width = image.shape
    if crop_size != height or crop_size != width:
        raise ShapeMismatchError("random crop", (crop_size, crop_size), (height, width))
    padded = np.pad(image, ((0, 0), (padding, padding), (padding, padding)))
    top = int(rng.integers(0, height + 2 * padding - crop_size + 1))
    left = int(rng.integers(0, width + 2 * padding - crop_size + 1))
    out = padded[:, top:top + crop_size, left:left + crop_size]
    if rng.random() < hflip_prob:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def geometric_augment(
    batch: LabeledBatch, plan: AugmentPlan, base_seed: int, example_ids: Optional[Sequence[int]] = None
) -> np.ndarray:
    ids = np.arange(len(batch)) if example_ids is None else np.asarray(example_ids)
    out = np.empty_like(batch.images)
    for row, (image, example_id) in enumerate(zip(batch.images, ids)):
        rng = derive_rng(base_seed, int(example_id))
        crop = image.shape[-1] if plan.crop_size is None else plan.crop_size
        out[row] = random_crop_flip(image, crop, plan.crop_padding, plan.hflip_prob, rng)
    return out


def augment_batch(
    batch: LabeledBatch,
    plan: AugmentPlan,
    net: Optional[Network],
    rng: np.random.Generator,
    example_ids: Optional[Sequence[int]] = None,
) -> LabeledBatch:
    """Expand a batch into [clean; adversarial; noisy] rows, all with soft targets.

    Crop and flip draw from per-example streams keyed by `example_ids`
    (defaulting to row positions), so the geometric part does not depend on
    batch order. Adversarial rows are crafted against `net` from the
    geometrically augmented clean rows.
    """
    if plan.include_pgd and net is None:
        raise ValueError("augment plan includes adversarial examples but no network was given")
    base_seed = int(rng.integers(0, 2 ** 63 - 1))
    clean = geometric_augment(batch, plan, base_seed, example_ids)
    images = [clean]
    if plan.include_pgd:
        if plan.train_attack == "pgd":
            images.append(pgd(net, clean, batch.labels, plan.attack, rng=derive_rng(base_seed, _ATTACK_STREAM)))
        else:
            images.append(fgsm(net, clean, batch.labels, plan.attack))
    if plan.include_gaussian:
        noise_rng = derive_rng(base_seed, _NOISE_STREAM)
        images.append(gaussian_noise(clean, plan.attack.noise_mu, plan.attack.noise_sigma, noise_rng))

    labels = np.tile(batch.labels, plan.views)
    return LabeledBatch(
        images=np.concatenate(images),
        labels=labels,
        n_classes=batch.n_classes,
        soft_targets=soft_labels(labels, batch.n_classes, plan.alpha_sl),
    )
