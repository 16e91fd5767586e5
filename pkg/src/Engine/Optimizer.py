from decimal import Decimal
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.Auxiliary.Errors import ShapeMismatchError
from src.Engine.Network import Network

Schedule = Literal["fixed", "piecewise"]


class SgdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=0.001, gt=0.0)
    "Base learning rate; the fixed schedule uses it for every epoch"
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0002, ge=0.0)
    schedule: Schedule = "fixed"
    milestones: Tuple[int, ...] = (100, 150)
    "Epochs at which the piecewise schedule decays the rate (lower boundary inclusive)"
    decay: float = Field(default=0.1, gt=0.0, le=1.0)

    @field_validator("milestones")
    @classmethod
    def _sorted_milestones(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(m < 0 for m in value) or list(value) != sorted(value):
            raise ValueError("milestones must be non-negative and ascending")
        return value

    def lr_for(self, epoch: Optional[int]) -> float:
        if epoch is None or self.schedule == "fixed":
            return self.lr
        return lr_at_epoch(epoch, "piecewise", self.lr, self.milestones, self.decay)


def lr_at_epoch(
    m: int,
    schedule: Schedule = "piecewise",
    base_lr: float = 0.001,
    milestones: Sequence[int] = (100, 150),
    gamma: float = 0.1,
) -> float:
    """Learning rate for epoch `m`.

    With the defaults: 0.001 below epoch 100, 0.0001 on [100, 150), 0.00001 from 150.
    """
    if m < 0:
        raise ValueError(f"epoch index must be >= 0 (got {m})")
    if schedule == "fixed":
        return float(base_lr)
    passed = sum(1 for milestone in milestones if m >= milestone)
    # Decimal keeps 0.001 * 0.1 * 0.1 equal to the literal 1e-05
    return float(Decimal(repr(base_lr)) * Decimal(repr(gamma)) ** passed)


def sgd_step(
    net: Network,
    grads: np.ndarray,
    cfg: SgdConfig,
    velocity: Optional[np.ndarray] = None,
    epoch: Optional[int] = None,
) -> Tuple[Network, np.ndarray]:
    """One SGD step with momentum; weight decay is folded into the gradient.

    v <- momentum * v + grads + weight_decay * theta
    theta <- theta - lr * v
    """
    theta = net.params
    if velocity is None:
        velocity = np.zeros_like(theta)
    if grads.shape != theta.shape:
        raise ShapeMismatchError("grads", theta.shape, grads.shape)
    if velocity.shape != theta.shape:
        raise ShapeMismatchError("velocity", theta.shape, velocity.shape)
    lr = cfg.lr_for(epoch)
    velocity = cfg.momentum * velocity + grads + cfg.weight_decay * theta
    return net.with_params(theta - lr * velocity), velocity
