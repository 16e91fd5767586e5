"""
White-box evasion attacks on `src.Engine.Network.Network`.

Every attack runs on a test-mode view of the network (running BatchNorm
statistics, fixed RReLU slope), works on a whole batch x of shape [B, ...] with
pixels in [0, 1], and keeps its output inside that box.
"""

import logging
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.Engine.Network import Network, forward, logits_and_vjp, loss_and_grads, one_hot

logger = logging.getLogger(__name__)

ATTACK_NAMES: Tuple[str, ...] = ("fgsm", "pgd", "bim", "deepfool", "cw", "identity")


class AttackConfig(BaseModel):
    """Hyperparameters for all attacks. Short names (alpha, iters, kappa, c_min, c_max, sigma) are accepted as aliases."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    epsilon: float = Field(default=0.031, gt=0.0)
    "L-infinity budget for FGSM / BIM / PGD"
    step_alpha: float = Field(default=0.00784, gt=0.0, alias="alpha")
    pgd_iters: int = Field(default=7, ge=1, alias="iters")
    pgd_random_init: bool = True
    df_overshoot: float = Field(default=1e-6, ge=0.0)
    df_max_iters: int = Field(default=100, ge=1)
    cw_kappa: float = Field(default=0.0, ge=0.0, alias="kappa")
    cw_lr: float = Field(default=0.01, gt=0.0)
    cw_iters: int = Field(default=10, ge=1)
    cw_c_min: float = Field(default=1e-5, gt=0.0, alias="c_min")
    cw_c_max: float = Field(default=20.0, gt=0.0, alias="c_max")
    cw_c_steps: int = Field(default=9, ge=1)
    noise_mu: float = 0.0
    noise_sigma: float = Field(default=0.1, ge=0.0, alias="sigma")

    @model_validator(mode="before")
    @classmethod
    def _split_c_range(cls, data):
        if isinstance(data, dict) and "cw_c_range" in data:
            data = dict(data)
            low, high = data.pop("cw_c_range")
            data["cw_c_min"], data["cw_c_max"] = low, high
        return data

    @model_validator(mode="after")
    def _check_c_range(self) -> "AttackConfig":
        if not self.cw_c_min < self.cw_c_max:
            raise ValueError("cw c range lower bound must be < upper bound")
        return self

    @property
    def cw_c_range(self) -> Tuple[float, float]:
        return (self.cw_c_min, self.cw_c_max)


class DeepFoolResult(NamedTuple):
    x_adv: np.ndarray
    iterations: np.ndarray
    fooled: np.ndarray


class CWResult(NamedTuple):
    x_adv: np.ndarray
    success: np.ndarray
    l2: np.ndarray


class AttackOutcome(NamedTuple):
    x_adv: np.ndarray
    failed: np.ndarray
    "Per-example flag for attacks that report failure (DeepFool, C&W)"


def _as_batch(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def input_gradient(net: Network, x: np.ndarray, y: Sequence[int]) -> np.ndarray:
    """Gradient of the summed cross-entropy w.r.t. the input, on the test-mode view."""
    view = net.in_mode("test")
    x = _as_batch(x)
    targets = one_hot(y, view.n_classes)
    grads = loss_and_grads(view, x, targets)
    # loss_and_grads averages over the batch
    return grads.grad_input * x.shape[0]


def fgsm(net: Network, x: np.ndarray, y: Sequence[int], cfg: AttackConfig) -> np.ndarray:
    x = _as_batch(x)
    g = input_gradient(net, x, y)
    return np.clip(x + cfg.epsilon * np.sign(g), 0.0, 1.0)


def pgd(
    net: Network,
    x: np.ndarray,
    y: Sequence[int],
    cfg: AttackConfig,
    rng: Optional[np.random.Generator] = None,
    on_step: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Projected gradient ascent in the L-infinity ball of radius epsilon.

    With `pgd_random_init` the start point is x plus U(-eps, eps) noise, clipped
    to the pixel box; otherwise the iteration starts at x (BIM). Each step is
    projected onto the ball and then onto [0, 1]. `on_step(t, x_t)` sees every
    iterate.
    """
    x = _as_batch(x)
    eps = cfg.epsilon
    if cfg.pgd_random_init:
        if rng is None:
            raise ValueError("pgd with random init needs an rng")
        x_adv = np.clip(x + rng.uniform(-eps, eps, size=x.shape), 0.0, 1.0)
    else:
        x_adv = x.copy()
    for t in range(cfg.pgd_iters):
        g = input_gradient(net, x_adv, y)
        x_adv = x_adv + cfg.step_alpha * np.sign(g)
        x_adv = np.clip(x_adv, x - eps, x + eps)
        x_adv = np.clip(x_adv, 0.0, 1.0)
        if on_step is not None:
            on_step(t, x_adv)
    return x_adv


def bim(net: Network, x: np.ndarray, y: Sequence[int], cfg: AttackConfig) -> np.ndarray:
    return pgd(net, x, y, cfg.model_copy(update={"pgd_random_init": False}))


def _logit_jacobian(view: Network, x_single: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Logits [N] and their input Jacobian [N, *input_shape] at one example."""
    n = view.n_classes
    stacked = np.repeat(x_single[None], n, axis=0)
    logits, _, jac = logits_and_vjp(view, stacked, np.eye(n))
    return logits[0], jac


def deepfool(
    net: Network,
    x: np.ndarray,
    cfg: AttackConfig,
    labels: Optional[Sequence[int]] = None,
) -> DeepFoolResult:
    """Multiclass DeepFool.

    The reference class of each example is `labels[i]` when given, else the
    network's prediction on the clean input. An example the network already
    gets wrong against its reference is returned unchanged after 0 iterations
    and counts as fooled. Otherwise the loop stops at the first iterate whose
    prediction differs from the reference, or after `df_max_iters` steps.
    """
    view = net.in_mode("test")
    x = _as_batch(x)
    clean_pred = np.argmax(forward(view, x), axis=1)
    reference = clean_pred if labels is None else np.asarray(labels, dtype=np.int64)
    x_adv = x.copy()
    iterations = np.zeros(len(x), dtype=np.int64)
    fooled = clean_pred != reference

    for i in np.flatnonzero(~fooled):
        k0 = int(reference[i])
        r_tot = np.zeros_like(x[i])
        candidate = x[i]
        for step in range(1, cfg.df_max_iters + 1):
            logits, jac = _logit_jacobian(view, candidate)
            w = jac - jac[k0]
            f = logits - logits[k0]
            norms = np.sqrt((w.reshape(len(w), -1) ** 2).sum(axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.abs(f) / norms
            dist[k0] = np.inf
            dist[norms == 0.0] = np.inf
            target = int(np.argmin(dist))
            if not np.isfinite(dist[target]):
                break
            r_tot = r_tot + (np.abs(f[target]) / norms[target] ** 2) * w[target]
            candidate = np.clip(x[i] + (1.0 + cfg.df_overshoot) * r_tot, 0.0, 1.0)
            iterations[i] = step
            if int(np.argmax(forward(view, candidate[None])[0])) != k0:
                fooled[i] = True
                break
        x_adv[i] = candidate
    logger.debug("deepfool fooled %d/%d examples", int(fooled.sum()), len(x))
    return DeepFoolResult(x_adv, iterations, fooled)


def _to_tanh_space(x: np.ndarray) -> np.ndarray:
    return np.arctanh((2.0 * x - 1.0) * (1.0 - 1e-6))


def _from_tanh_space(w: np.ndarray) -> np.ndarray:
    return (np.tanh(w) + 1.0) / 2.0


def _margin(logits: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """logit_y - max_{i != y} logit_i, and the runner-up class."""
    rows = np.arange(len(y))
    others = logits.copy()
    others[rows, y] = -np.inf
    runner_up = np.argmax(others, axis=1)
    return logits[rows, y] - others[rows, runner_up], runner_up


def cw_l2(net: Network, x: np.ndarray, y: Sequence[int], cfg: AttackConfig) -> CWResult:
    """Carlini-Wagner L2 attack with a tanh box reparameterisation.

    Per trial, minimises ||x' - x||^2 + c * max(margin(x'), -kappa) with Adam at
    `cw_lr` for `cw_iters` steps. The constant c starts at the lower end of the
    range, grows tenfold until a trial succeeds, and is bisected afterwards.
    Returns the successful iterate with the smallest L2 norm over all trials;
    failed examples come back unchanged with `success` False.
    """
    view = net.in_mode("test")
    x = _as_batch(x)
    y = np.asarray(y, dtype=np.int64)
    batch = len(x)
    rows = np.arange(batch)

    clean_pred = np.argmax(forward(view, x), axis=1)
    success = clean_pred != y
    best_l2 = np.where(success, 0.0, np.inf)
    best_adv = x.copy()
    todo = ~success
    if not todo.any():
        return CWResult(best_adv, success, np.zeros(batch))

    c_low, c_high = cfg.cw_c_min, cfg.cw_c_max
    lower = np.full(batch, c_low)
    upper = np.full(batch, c_high)
    bracketed = np.zeros(batch, dtype=bool)
    const = np.full(batch, c_low)
    w0 = _to_tanh_space(x)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    for trial in range(cfg.cw_c_steps):
        w = w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        trial_success = np.zeros(batch, dtype=bool)
        for step in range(cfg.cw_iters + 1):
            x_adv = _from_tanh_space(w)
            logits = forward(view, x_adv)
            margin, runner_up = _margin(logits, y)
            hit = (np.argmax(logits, axis=1) != y) & todo
            l2 = np.sqrt(((x_adv - x).reshape(batch, -1) ** 2).sum(axis=1))
            improved = hit & (l2 < best_l2)
            best_l2 = np.where(improved, l2, best_l2)
            best_adv[improved] = x_adv[improved]
            trial_success |= hit
            if step == cfg.cw_iters:
                break
            active = (margin > -cfg.cw_kappa) & todo
            dlogits = np.zeros_like(logits)
            dlogits[rows, y] = const * active
            dlogits[rows, runner_up] -= const * active
            _, _, g_logit = logits_and_vjp(view, x_adv, dlogits)
            grad_x = 2.0 * (x_adv - x) * todo.reshape((-1,) + (1,) * (x.ndim - 1)) + g_logit
            grad_w = grad_x * (1.0 - np.tanh(w) ** 2) / 2.0
            m = beta1 * m + (1.0 - beta1) * grad_w
            v = beta2 * v + (1.0 - beta2) * grad_w ** 2
            m_hat = m / (1.0 - beta1 ** (step + 1))
            v_hat = v / (1.0 - beta2 ** (step + 1))
            w = w - cfg.cw_lr * m_hat / (np.sqrt(v_hat) + adam_eps)

        upper = np.where(trial_success, np.minimum(upper, const), upper)
        lower = np.where(~trial_success, np.maximum(lower, const), lower)
        bracketed |= trial_success
        const = np.where(bracketed, (lower + upper) / 2.0, np.minimum(const * 10.0, c_high))
        logger.debug("cw trial %d: %d/%d successful", trial, int(trial_success.sum()), batch)

    success = np.isfinite(best_l2)
    return CWResult(best_adv, success, np.where(success, best_l2, 0.0))


def gaussian_noise(
    x: np.ndarray,
    mu: float = 0.0,
    sigma: float = 0.1,
    rng: Optional[np.random.Generator] = None,
    clip: bool = True,
) -> np.ndarray:
    """x + N(mu, sigma^2) elementwise, clipped to [0, 1] unless `clip` is False."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0 (got {sigma})")
    x = _as_batch(x)
    if sigma == 0.0 and mu == 0.0:
        return x.copy()
    if rng is None:
        raise ValueError("gaussian_noise needs an rng")
    noisy = x + rng.normal(mu, sigma, size=x.shape)
    return np.clip(noisy, 0.0, 1.0) if clip else noisy


def run_attack(
    name: str,
    net: Network,
    x: np.ndarray,
    y: Sequence[int],
    cfg: AttackConfig,
    rng: Optional[np.random.Generator] = None,
) -> AttackOutcome:
    """Dispatch by attack name; see ATTACK_NAMES."""
    x = _as_batch(x)
    no_failures = np.zeros(len(x), dtype=bool)
    if name == "identity":
        return AttackOutcome(x.copy(), no_failures)
    if name == "fgsm":
        return AttackOutcome(fgsm(net, x, y, cfg), no_failures)
    if name == "pgd":
        return AttackOutcome(pgd(net, x, y, cfg, rng=rng), no_failures)
    if name == "bim":
        return AttackOutcome(bim(net, x, y, cfg), no_failures)
    if name == "deepfool":
        result = deepfool(net, x, cfg, labels=y)
        return AttackOutcome(result.x_adv, ~result.fooled)
    if name == "cw":
        result = cw_l2(net, x, y, cfg)
        return AttackOutcome(result.x_adv, ~result.success)
    raise ValueError(f"Unknown attack '{name}'. Expected one of {', '.join(ATTACK_NAMES)}")

