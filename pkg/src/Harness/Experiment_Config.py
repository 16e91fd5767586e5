"""
YAML experiment configuration.

A config document has one section per concern (experiment, data, nn, attack,
augment, partition, fed, eval, regression). Unknown keys are rejected so a
typo surfaces as a field-level error instead of a silently ignored setting.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.Attacks.Evasion_Attacks import AttackConfig
from src.Auxiliary.Errors import ExperimentConfigError
from src.Data.Augmentation import AugmentPlan
from src.Data.Partition import Strategy
from src.Data.Synthetic_Blobs import BlobSpec
from src.Engine.Activations import ActivationKind
from src.Engine.Optimizer import Schedule, SgdConfig
from src.Federation.Client import FedConfig
from src.Harness.Evaluation import EvalConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Section):
    name: str = "experiment"
    seed: int = 0
    out_dir: Optional[str] = None
    "Defaults to $FEDAT_OUT_DIR, then ./results"
    progress: bool = True


class DataSection(_Section):
    source: Literal["blobs", "cifar10"] = "blobs"
    cifar_dir: Optional[str] = None
    "Defaults to $FEDAT_DATA_DIR"
    blobs: BlobSpec = BlobSpec()
    train_subsample: Optional[int] = Field(default=None, ge=1)


class NnSection(_Section):
    architecture: Literal["mini_resnet", "mlp"] = "mini_resnet"
    depth: int = Field(default=1, ge=1)
    width: int = Field(default=4, ge=1)
    hidden: List[int] = [32]
    batchnorm: bool = True
    activation: Union[str, ActivationKind] = "relu"
    init_seed: Optional[int] = None
    "Weight-init seed; defaults to experiment.seed"
    lr: float = Field(default=0.001, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0002, ge=0.0)
    schedule: Schedule = "fixed"
    milestones: Tuple[int, ...] = (100, 150)
    decay: float = Field(default=0.1, gt=0.0, le=1.0)
    epochs: int = Field(default=1, ge=1)
    "Epochs of centralized training"
    batch_size: int = Field(default=128, ge=1)

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value):
        return ActivationKind.parse(value)

    def sgd(self) -> SgdConfig:
        return SgdConfig(
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            schedule=self.schedule,
            milestones=self.milestones,
            decay=self.decay,
        )


class AugmentSection(_Section):
    crop_size: Optional[int] = Field(default=None, gt=0)
    "Defaults to the image side"
    crop_padding: int = Field(default=4, ge=0)
    hflip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    include_pgd: bool = True
    include_gaussian: bool = True
    train_attack: Literal["pgd", "fgsm"] = "pgd"
    alpha_sl: float = Field(default=0.05, ge=0.0, le=1.0)
    regenerate_each_epoch: bool = True

    def plan(self, attack: AttackConfig) -> AugmentPlan:
        return AugmentPlan(**self.model_dump(), attack=attack)


class PartitionSection(_Section):
    strategy: Strategy = "iid"
    alpha_share: Union[float, List[float]] = 0.0
    "A list runs one federation per value (sharing sweep)"
    shared_per_class: int = Field(default=0, ge=0)
    beta_dirichlet: float = Field(default=0.5, gt=0.0)

    @field_validator("alpha_share")
    @classmethod
    def _fractions(cls, value):
        values = value if isinstance(value, list) else [value]
        if not values or any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("alpha_share values must lie in [0, 1]")
        return value

    @property
    def alpha_values(self) -> List[float]:
        return list(self.alpha_share) if isinstance(self.alpha_share, list) else [self.alpha_share]


class RegressionSection(_Section):
    table_csv: Optional[str] = None
    "CSV with sharing_percent and accuracy columns; the built-in reference table when omitted"
    points: Optional[List[Tuple[float, float]]] = None
    "Explicit (x, y) points, fitted in addition to the table"
    x_domain: Literal["percent", "fraction"] = "percent"


class ExperimentConfig(_Section):
    experiment: ExperimentSection = ExperimentSection()
    data: DataSection = DataSection()
    nn: NnSection = NnSection()
    attack: AttackConfig = AttackConfig()
    augment: AugmentSection = AugmentSection()
    partition: PartitionSection = PartitionSection()
    fed: FedConfig = Field(default_factory=FedConfig)
    eval: EvalConfig = EvalConfig()
    regression: RegressionSection = RegressionSection()

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def augment_plan(self) -> AugmentPlan:
        return self.augment.plan(self.attack)

    def out_dir(self) -> Path:
        return Path(self.experiment.out_dir or os.getenv("FEDAT_OUT_DIR") or "results")


def _errors_from(exc: ValidationError) -> List[Tuple[str, str]]:
    return [(".".join(str(part) for part in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]


def parse_config(data: Dict[str, Any], source: Optional[str] = None) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ExperimentConfigError(_errors_from(exc), source) from exc


def load_config(
    path: Union[str, Path], seed: Optional[int] = None, out_dir: Optional[str] = None
) -> ExperimentConfig:
    """Read and validate a YAML config; `seed` and `out_dir` override the file's experiment section."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ExperimentConfigError([("<yaml>", str(exc))], str(path)) from exc
    if not isinstance(data, dict):
        raise ExperimentConfigError([("<root>", "config must be a mapping of sections")], str(path))
    experiment = dict(data.get("experiment") or {})
    if seed is not None:
        experiment["seed"] = seed
    if out_dir is not None:
        experiment["out_dir"] = out_dir
    data["experiment"] = experiment
    return parse_config(data, str(path))
