"""
Elementwise activation functions used in the hidden layers of the network engine.

Eleven kinds are supported: relu, rrelu, selu, celu, silu, hardsilu, hardtanh,
gelu (tanh approximation), softplus, telu and mish. Every kind has a forward
rule (`act_eval`) and an analytic derivative (`act_derivative`); the stochastic
RReLU samples a per-element negative slope from U(l, u) in train mode and uses
the fixed slope (l + u) / 2 in test mode.
"""

import math
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

KindName = Literal[
    "relu", "rrelu", "selu", "celu", "silu", "hardsilu", "hardtanh", "gelu", "softplus", "telu", "mish"
]
Mode = Literal["train", "test"]

ACTIVATION_NAMES: Tuple[str, ...] = (
    "relu", "rrelu", "selu", "celu", "silu", "hardsilu", "hardtanh", "gelu", "softplus", "telu", "mish",
)

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
# tanh(e^x) == 1.0 in float64 well before x = 30
_TELU_EXP_CAP = 30.0


class ActivationKind(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: KindName
    "Which activation function"
    rrelu_lower: float = 1.0 / 8.0
    "Lower bound l of the RReLU slope distribution"
    rrelu_upper: float = 1.0 / 3.0
    "Upper bound u of the RReLU slope distribution"
    selu_alpha: float = 1.6732632423543772
    selu_scale: float = 1.0507009873554805
    celu_alpha: float = Field(default=1.0, gt=0.0)
    "CeLU shape parameter, fixed per experiment"
    hardtanh_min: float = -1.0
    hardtanh_max: float = 1.0
    gelu_c: float = 0.044715
    softplus_beta: float = 1.0

    @model_validator(mode="after")
    def _check_constants(self) -> "ActivationKind":
        if not self.rrelu_lower < self.rrelu_upper:
            raise ValueError("rrelu_lower must be < rrelu_upper")
        if not self.softplus_beta > 0:
            raise ValueError("softplus_beta must be > 0")
        if not self.hardtanh_min < self.hardtanh_max:
            raise ValueError("hardtanh_min must be < hardtanh_max")
        return self

    @classmethod
    def parse(cls, value: Union[str, "ActivationKind", Dict]) -> "ActivationKind":
        """Accept a lowercase name ("telu"), a mapping, or an existing instance."""
        if isinstance(value, ActivationKind):
            return value
        if isinstance(value, str):
            name = value.strip().lower()
            if name not in ACTIVATION_NAMES:
                raise ValueError(f"Unknown activation '{value}'. Expected one of {', '.join(ACTIVATION_NAMES)}")
            return cls(kind=name)
        return cls.model_validate(value)

    @property
    def test_slope(self) -> float:
        return (self.rrelu_lower + self.rrelu_upper) / 2.0

    def kinks(self) -> Tuple[float, ...]:
        """Points where the function is not continuously differentiable."""
        if self.kind in ("relu", "rrelu", "selu"):
            return (0.0,)
        if self.kind == "hardsilu":
            return (-3.0, 3.0)
        if self.kind == "hardtanh":
            return (self.hardtanh_min, self.hardtanh_max)
        return ()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
    return np.logaddexp(0.0, beta * x) / beta


def sample_rrelu_slopes(kind: ActivationKind, shape, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(kind.rrelu_lower, kind.rrelu_upper, size=shape)


def act_eval(
    kind: ActivationKind,
    x: np.ndarray,
    mode: Mode = "test",
    rng: Optional[np.random.Generator] = None,
    slopes: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Apply the activation elementwise.

    For RReLU in train mode the negative slopes are taken from `slopes` when
    given, otherwise sampled from `rng`. Use `act_eval_with_slopes` when the
    sampled slopes are needed for the backward pass.
    """
    return act_eval_with_slopes(kind, x, mode, rng, slopes)[0]


def act_eval_with_slopes(
    kind: ActivationKind,
    x: np.ndarray,
    mode: Mode = "test",
    rng: Optional[np.random.Generator] = None,
    slopes: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    x = np.asarray(x, dtype=np.float64)
    k = kind.kind
    if k == "relu":
        return np.where(x >= 0, x, 0.0), None
    if k == "rrelu":
        if mode == "train":
            if slopes is None:
                if rng is None:
                    raise ValueError("RReLU in train mode needs an rng or pre-sampled slopes")
                slopes = sample_rrelu_slopes(kind, x.shape, rng)
            return np.where(x >= 0, x, slopes * x), slopes
        return np.where(x >= 0, x, kind.test_slope * x), None
    if k == "selu":
        neg = kind.selu_alpha * np.expm1(np.minimum(x, 0.0))
        return kind.selu_scale * np.where(x >= 0, x, neg), None
    if k == "celu":
        a = kind.celu_alpha
        return np.where(x >= 0, x, a * np.expm1(np.minimum(x, 0.0) / a)), None
    if k == "silu":
        return x * _sigmoid(x), None
    if k == "hardsilu":
        mid = x * (x + 3.0) / 6.0
        return np.where(x <= -3.0, 0.0, np.where(x >= 3.0, x, mid)), None
    if k == "hardtanh":
        return np.clip(x, kind.hardtanh_min, kind.hardtanh_max), None
    if k == "gelu":
        u = _SQRT_2_OVER_PI * (x + kind.gelu_c * x ** 3)
        return 0.5 * x * (1.0 + np.tanh(u)), None
    if k == "softplus":
        return _softplus(x, kind.softplus_beta), None
    if k == "telu":
        return x * np.tanh(np.exp(np.minimum(x, _TELU_EXP_CAP))), None
    if k == "mish":
        return x * np.tanh(_softplus(x)), None
    raise ValueError(f"Unknown activation kind '{k}'")


def act_derivative(
    kind: ActivationKind,
    x: np.ndarray,
    mode: Mode = "test",
    slopes: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Elementwise analytic derivative of `act_eval`.

    Train-mode RReLU needs the slopes sampled by the matching forward call.
    """
    x = np.asarray(x, dtype=np.float64)
    k = kind.kind
    if k == "relu":
        return (x > 0).astype(np.float64)
    if k == "rrelu":
        if mode == "train":
            if slopes is None:
                raise ValueError("Train-mode RReLU derivative needs the slopes sampled in the forward pass")
            return np.where(x >= 0, 1.0, slopes)
        return np.where(x >= 0, 1.0, kind.test_slope)
    if k == "selu":
        neg = kind.selu_alpha * np.exp(np.minimum(x, 0.0))
        return kind.selu_scale * np.where(x >= 0, 1.0, neg)
    if k == "celu":
        return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0) / kind.celu_alpha))
    if k == "silu":
        s = _sigmoid(x)
        return s * (1.0 + x * (1.0 - s))
    if k == "hardsilu":
        return np.where(x <= -3.0, 0.0, np.where(x >= 3.0, 1.0, (2.0 * x + 3.0) / 6.0))
    if k == "hardtanh":
        inside = (x > kind.hardtanh_min) & (x < kind.hardtanh_max)
        return inside.astype(np.float64)
    if k == "gelu":
        c = kind.gelu_c
        t = np.tanh(_SQRT_2_OVER_PI * (x + c * x ** 3))
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _SQRT_2_OVER_PI * (1.0 + 3.0 * c * x * x)
    if k == "softplus":
        return _sigmoid(kind.softplus_beta * x)
    if k == "telu":
        e = np.exp(np.minimum(x, _TELU_EXP_CAP))
        t = np.tanh(e)
        return t + x * e * (1.0 - t * t)
    if k == "mish":
        t = np.tanh(_softplus(x))
        return t + x * _sigmoid(x) * (1.0 - t * t)
    raise ValueError(f"Unknown activation kind '{k}'")
