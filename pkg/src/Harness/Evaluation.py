import logging
from typing import Dict, List, Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.Attacks.Evasion_Attacks import ATTACK_NAMES, AttackConfig, gaussian_noise, run_attack
from src.Auxiliary.Seeding import derive_rng
from src.Data.Labeled_Batch import LabeledBatch
from src.Engine.Network import Network, predict

logger = logging.getLogger(__name__)

AttackName = Literal["fgsm", "pgd", "bim", "deepfool", "cw", "identity"]


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    attacks: List[AttackName] = ["fgsm", "pgd", "deepfool", "cw"]
    test_noise_sigma: float = Field(default=0.1, ge=0.0)
    "Std of the Gaussian noise added to adversarial examples; 0 disables it"
    test_noise_mu: float = 0.0
    headline_attack: AttackName = "pgd"
    "Attack whose robust accuracy fills the robust_acc column of sharing sweeps"
    noise_on_natural: bool = False
    subsample: Optional[int] = Field(default=None, ge=1)
    "Evaluate on the first `subsample` test examples only"
    batch_size: int = Field(default=256, ge=1)
    every: int = Field(default=1, ge=1)
    "Evaluate every n-th federated round or centralized epoch, and always after the last"
    model_path: Optional[str] = None
    "Model file for attack-eval"

    @model_validator(mode="after")
    def _headline_is_run(self) -> "EvalConfig":
        if self.headline_attack not in self.attacks:
            raise ValueError(f"headline_attack '{self.headline_attack}' is not among the evaluated attacks")
        return self


class RobustResult(NamedTuple):
    accuracy: float
    failures: int


class EvalSnapshot(BaseModel):
    natural_acc: Optional[float] = None
    robust_acc: Dict[str, Optional[float]] = {}
    attack_failures: Dict[str, int] = {}


def _limit(test: LabeledBatch, cfg: EvalConfig) -> LabeledBatch:
    if len(test) == 0:
        raise ValueError("Cannot evaluate on an empty test set")
    if cfg.subsample is not None and cfg.subsample < len(test):
        return test.subset(np.arange(cfg.subsample))
    return test


def _with_noise(x: np.ndarray, cfg: EvalConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.test_noise_sigma == 0.0 and cfg.test_noise_mu == 0.0:
        return x
    return gaussian_noise(x, cfg.test_noise_mu, cfg.test_noise_sigma, rng)


def eval_natural(
    net: Network, test: LabeledBatch, cfg: Optional[EvalConfig] = None, rng: Optional[np.random.Generator] = None
) -> float:
    """Argmax accuracy on clean images (optionally noise-injected, see EvalConfig.noise_on_natural)."""
    cfg = cfg or EvalConfig()
    test = _limit(test, cfg)
    images = test.images
    if cfg.noise_on_natural:
        images = _with_noise(images, cfg, rng if rng is not None else derive_rng(0, 0))
    correct = predict(net, images, cfg.batch_size) == test.labels
    return float(correct.mean())


def eval_robust(
    net: Network,
    test: LabeledBatch,
    attack: str,
    cfg: Optional[EvalConfig] = None,
    attack_cfg: Optional[AttackConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> RobustResult:
    """Accuracy on adversarial examples crafted from the clean test images, plus test-time noise.

    Examples an attack reports as failed are kept unperturbed and counted in
    `failures`.
    """
    cfg = cfg or EvalConfig()
    attack_cfg = attack_cfg or AttackConfig()
    rng = rng if rng is not None else derive_rng(0, ATTACK_NAMES.index(attack))
    test = _limit(test, cfg)
    correct, failures = 0, 0
    for start in range(0, len(test), cfg.batch_size):
        xb = test.images[start:start + cfg.batch_size]
        yb = test.labels[start:start + cfg.batch_size]
        outcome = run_attack(attack, net, xb, yb, attack_cfg, rng=rng)
        x_adv = np.where(outcome.failed.reshape((-1,) + (1,) * (xb.ndim - 1)), xb, outcome.x_adv)
        x_adv = _with_noise(x_adv, cfg, rng)
        correct += int((predict(net, x_adv, cfg.batch_size) == yb).sum())
        failures += int(outcome.failed.sum())
    if failures:
        logger.warning("%s: attack failed on %d of %d examples", attack, failures, len(test))
    return RobustResult(correct / len(test), failures)


def evaluate_all(
    net: Network, test: LabeledBatch, cfg: EvalConfig, attack_cfg: AttackConfig, seed: int
) -> EvalSnapshot:
    """Natural accuracy and robust accuracy under every configured attack."""
    natural = eval_natural(net, test, cfg, derive_rng(seed, 0xE7A1))
    robust: Dict[str, Optional[float]] = {}
    failed: Dict[str, int] = {}
    for name in cfg.attacks:
        result = eval_robust(net, test, name, cfg, attack_cfg, derive_rng(seed, 0xE7A1, ATTACK_NAMES.index(name)))
        robust[name], failed[name] = result.accuracy, result.failures
    logger.debug("evaluation: natural %.4f, robust %s", natural, robust)
    return EvalSnapshot(natural_acc=natural, robust_acc=robust, attack_failures=failed)
