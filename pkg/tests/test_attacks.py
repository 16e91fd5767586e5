import numpy as np
import pytest

from src.Attacks.Evasion_Attacks import (
    AttackConfig,
    bim,
    cw_l2,
    deepfool,
    fgsm,
    gaussian_noise,
    pgd,
    run_attack,
)
from src.Engine.Network import build_mlp, forward, log_softmax, predict

from tests.conftest import linear_net


def binary_linear_model(rng, distance, n_in=4):
    """Two-class dense model whose clean point x = 0.5 sits `distance` (L2) from the boundary, class 0 winning."""
    W = rng.normal(size=(n_in, 2))
    d = W[:, 0] - W[:, 1]
    x = np.full(n_in, 0.5)
    margin_without_bias = float(d @ x)
    b = np.array([distance * np.linalg.norm(d) - margin_without_bias, 0.0])
    return linear_net(W, b), x, d


def test_config_accepts_short_names():
    cfg = AttackConfig(alpha=0.01, iters=3, kappa=0.5, sigma=0.2, cw_c_range=(0.01, 5.0))
    assert (cfg.step_alpha, cfg.pgd_iters, cfg.cw_kappa, cfg.noise_sigma) == (0.01, 3, 0.5, 0.2)
    assert cfg.cw_c_range == (0.01, 5.0)


def test_config_rejects_empty_c_range():
    with pytest.raises(ValueError):
        AttackConfig(cw_c_range=(5.0, 1.0))


def test_default_budget_is_about_eight_over_255():
    assert AttackConfig().epsilon == pytest.approx(8 / 255, abs=5e-4)


def test_fgsm_on_constant_net_is_identity(rng):
    net = linear_net(np.zeros((3, 2)), np.array([1.0, -1.0]))
    x = rng.uniform(size=(4, 3))
    np.testing.assert_array_equal(fgsm(net, x, [0, 1, 0, 1], AttackConfig()), x)


def test_fgsm_stays_in_budget_and_box(tiny_mlp, rng):
    x = rng.uniform(size=(8, 1, 4, 4))
    out = fgsm(tiny_mlp, x, rng.integers(0, 3, 8), AttackConfig(epsilon=0.05))
    assert np.abs(out - x).max() <= 0.05 + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0


def per_example_loss(net, x, y):
    return -log_softmax(forward(net.in_mode("test"), x))[np.arange(len(y)), y]


def test_fgsm_is_a_first_order_ascent_step(tiny_mlp, rng):
    x = rng.uniform(0.1, 0.9, size=(200, 1, 4, 4))
    y = rng.integers(0, 3, 200)
    adv = fgsm(tiny_mlp, x, y, AttackConfig(epsilon=1e-3))
    rose = per_example_loss(tiny_mlp, adv, y) >= per_example_loss(tiny_mlp, x, y)
    assert rose.mean() >= 0.95


def test_fgsm_on_linear_model_steps_against_the_weight_difference(rng):
    net, x, d = binary_linear_model(rng, distance=0.2)
    out = fgsm(net, x[None], [0], AttackConfig(epsilon=0.031))
    np.testing.assert_allclose(out[0], x - 0.031 * np.sign(d), rtol=0, atol=1e-15)


def test_single_step_pgd_without_init_equals_fgsm(tiny_mlp, rng):
    x = rng.uniform(size=(6, 1, 4, 4))
    y = rng.integers(0, 3, 6)
    cfg = AttackConfig(epsilon=0.031, step_alpha=0.031, pgd_iters=1, pgd_random_init=False)
    np.testing.assert_array_equal(pgd(tiny_mlp, x, y, cfg), fgsm(tiny_mlp, x, y, cfg))


def test_pgd_iterates_stay_in_ball_and_box():
    net = build_mlp((1, 3, 3), 3, hidden=(5,), activation="relu", seed=0)
    rng = np.random.default_rng(0)
    violations = []

    for trial in range(1000):
        eps = rng.uniform(0.005, 0.2)
        cfg = AttackConfig(epsilon=eps, step_alpha=rng.uniform(0.001, 0.1), pgd_iters=3)
        x = rng.uniform(size=(2, 1, 3, 3))

        def check(t, x_t, x=x, eps=eps):
            if np.abs(x_t - x).max() > eps + 1e-12 or x_t.min() < 0.0 or x_t.max() > 1.0:
                violations.append((trial, t))

        pgd(net, x, rng.integers(0, 3, 2), cfg, rng=rng, on_step=check)
    assert violations == []


def test_pgd_random_init_needs_rng(tiny_mlp):
    with pytest.raises(ValueError, match="rng"):
        pgd(tiny_mlp, np.zeros((1, 1, 4, 4)), [0], AttackConfig())


def test_pgd_is_reproducible_with_same_stream(tiny_mlp, rng):
    x = rng.uniform(size=(3, 1, 4, 4))
    a = pgd(tiny_mlp, x, [0, 1, 2], AttackConfig(), rng=np.random.default_rng(5))
    b = pgd(tiny_mlp, x, [0, 1, 2], AttackConfig(), rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_bim_is_pgd_without_random_start(tiny_mlp, rng):
    x = rng.uniform(size=(3, 1, 4, 4))
    cfg = AttackConfig(pgd_iters=4)
    expected = pgd(tiny_mlp, x, [0, 1, 2], cfg.model_copy(update={"pgd_random_init": False}))
    np.testing.assert_array_equal(bim(tiny_mlp, x, [0, 1, 2], cfg), expected)


@pytest.mark.parametrize("seed", range(10))
def test_deepfool_matches_hyperplane_projection(seed):
    rng = np.random.default_rng(seed)
    net, x, d = binary_linear_model(rng, distance=0.1)
    cfg = AttackConfig(df_overshoot=1e-6)
    result = deepfool(net, x[None], cfg)
    f = float(net.layer_params(0)["W"][:, 0] @ x + net.layer_params(0)["b"][0]
              - net.layer_params(0)["W"][:, 1] @ x - net.layer_params(0)["b"][1])
    expected = -(f / (d @ d)) * d * (1.0 + cfg.df_overshoot)
    np.testing.assert_allclose(result.x_adv[0] - x, expected, rtol=1e-6, atol=1e-12)
    assert result.fooled[0] and result.iterations[0] == 1


def test_deepfool_leaves_misclassified_input_alone(rng):
    net, x, _ = binary_linear_model(rng, distance=0.2)
    result = deepfool(net, x[None], AttackConfig(), labels=[1])
    np.testing.assert_array_equal(result.x_adv[0], x)
    assert result.iterations[0] == 0 and result.fooled[0]


# longer inner loop and a wider c range than the defaults so a 0.3 gap is reachable
@pytest.mark.parametrize("seed", range(50))
def test_cw_finds_near_minimal_perturbation(seed):
    rng = np.random.default_rng(100 + seed)
    distance = 0.3
    net, x, _ = binary_linear_model(rng, distance=distance)
    cfg = AttackConfig(cw_iters=300, cw_lr=0.01, cw_c_steps=9, cw_c_range=(1e-3, 1e3))
    result = cw_l2(net, x[None], [0], cfg)
    assert result.success[0]
    assert predict(net, result.x_adv)[0] == 1
    assert result.l2[0] == pytest.approx(distance, rel=0.1)


def test_cw_already_misclassified_has_zero_norm(rng):
    net, x, _ = binary_linear_model(rng, distance=0.2)
    result = cw_l2(net, x[None], [1], AttackConfig())
    assert result.success[0] and result.l2[0] == 0.0
    np.testing.assert_array_equal(result.x_adv[0], x)


def test_gaussian_noise_with_zero_parameters_is_identity(rng):
    x = rng.uniform(size=(2, 1, 3, 3))
    np.testing.assert_array_equal(gaussian_noise(x, 0.0, 0.0), x)


def test_gaussian_noise_is_clipped(rng):
    out = gaussian_noise(np.full((100, 1, 2, 2), 0.95), 0.0, 0.5, rng)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_gaussian_noise_rejects_negative_sigma(rng):
    with pytest.raises(ValueError):
        gaussian_noise(np.zeros((1, 1, 2, 2)), 0.0, -0.1, rng)


def test_run_attack_reports_failures_for_deepfool():
    net = linear_net(np.zeros((2, 2)), np.zeros(2))
    outcome = run_attack("deepfool", net, np.full((3, 2), 0.5), [0, 0, 0], AttackConfig())
    assert outcome.failed.tolist() == [True, True, True]


def test_run_attack_identity_copies_input(rng):
    x = rng.uniform(size=(2, 3))
    outcome = run_attack("identity", linear_net(np.eye(3), np.zeros(3)), x, [0, 1], AttackConfig())
    np.testing.assert_array_equal(outcome.x_adv, x)
    assert not outcome.failed.any()


def test_run_attack_rejects_unknown_name(tiny_mlp):
    with pytest.raises(ValueError, match="Unknown attack"):
        run_attack("jsma", tiny_mlp, np.zeros((1, 1, 4, 4)), [0], AttackConfig())


@pytest.mark.parametrize("seed", range(10))
def test_cw_with_default_settings_reaches_a_close_boundary(seed):
    rng = np.random.default_rng(300 + seed)
    distance = 0.04
    net, x, _ = binary_linear_model(rng, distance=distance)
    result = cw_l2(net, x[None], [0], AttackConfig())
    assert result.success[0]
    assert predict(net, result.x_adv)[0] == 1
    # ten Adam steps move along the gradient sign, so the path can be up to sqrt(n) longer than the shortest one
    assert distance - 1e-9 <= result.l2[0] <= 2.5 * distance


@pytest.mark.parametrize("mu", [0.0, 0.2])
def test_unclipped_gaussian_noise_has_requested_moments(mu):
    x = np.zeros((2000, 1, 10, 10))
    noise = gaussian_noise(x, mu, 0.1, np.random.default_rng(11), clip=False)
    assert noise.mean() == pytest.approx(mu, abs=1e-3)
    assert noise.std() == pytest.approx(0.1, abs=1e-3)
