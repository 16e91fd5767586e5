import numpy as np
import pytest

from src.Auxiliary.Errors import ShapeMismatchError
from src.Engine.Network import Dense, Network, loss_and_grads, one_hot
from src.Engine.Optimizer import SgdConfig, lr_at_epoch, sgd_step


def scalar_net(theta):
    # 1 -> 1 dense layer: theta = [W, b]
    return Network([Dense(in_features=1, out_features=1)], (1,), 1, params=np.asarray(theta, dtype=float))


def test_plain_step():
    net, _ = sgd_step(scalar_net([1.0, 1.0]), np.array([1.0, 1.0]), SgdConfig(lr=0.1, momentum=0.0, weight_decay=0.0))
    np.testing.assert_allclose(net.params, [0.9, 0.9], rtol=0, atol=1e-15)


@pytest.mark.parametrize("momentum", [0.0, 0.5, 0.9])
def test_zero_gradient_without_decay_keeps_theta(momentum):
    net = scalar_net([0.3, -1.2])
    out, velocity = sgd_step(net, np.zeros(2), SgdConfig(lr=0.1, momentum=momentum, weight_decay=0.0))
    np.testing.assert_array_equal(out.params, net.params)
    np.testing.assert_array_equal(velocity, np.zeros(2))


def test_momentum_accumulates():
    cfg = SgdConfig(lr=1.0, momentum=0.5, weight_decay=0.0)
    net, v = sgd_step(scalar_net([0.0, 0.0]), np.array([1.0, 0.0]), cfg)
    net, v = sgd_step(net, np.array([1.0, 0.0]), cfg, velocity=v)
    assert v.tolist() == [1.5, 0.0]
    assert net.params.tolist() == [-2.5, 0.0]


def separable_points(rng, n=80):
    points = rng.uniform(size=(4 * n, 2))
    points = points[np.abs(points[:, 0] - points[:, 1]) > 0.2][:n]
    return points, (points[:, 0] > points[:, 1]).astype(int)


def test_two_hundred_steps_halve_the_loss_on_separable_data():
    rng = np.random.default_rng(8)
    x, y = separable_points(rng)
    targets = one_hot(y, 2)
    net = Network([Dense(in_features=2, out_features=2)], (2,), 2, params=np.zeros(6), mode="test")
    cfg = SgdConfig(lr=0.1, momentum=0.9, weight_decay=0.0)
    initial = loss_and_grads(net, x, targets).loss
    velocity = None
    for _ in range(200):
        net, velocity = sgd_step(net, loss_and_grads(net, x, targets).grad_params, cfg, velocity)
    assert loss_and_grads(net, x, targets).loss <= 0.5 * initial


def test_weight_decay_is_folded_into_gradient():
    cfg = SgdConfig(lr=0.5, momentum=0.0, weight_decay=0.1)
    net, _ = sgd_step(scalar_net([2.0, 0.0]), np.zeros(2), cfg)
    assert net.params[0] == pytest.approx(2.0 - 0.5 * 0.2)


def test_zero_learning_rate_keeps_theta():
    cfg = SgdConfig.model_construct(lr=0.0, momentum=0.9, weight_decay=0.0002, schedule="fixed", milestones=(100, 150), decay=0.1)
    net = scalar_net([0.7, 0.1])
    out, _ = sgd_step(net, np.array([3.0, -4.0]), cfg)
    np.testing.assert_array_equal(out.params, net.params)


def test_gradient_shape_is_checked():
    with pytest.raises(ShapeMismatchError):
        sgd_step(scalar_net([0.0, 0.0]), np.zeros(3), SgdConfig())


def test_non_positive_learning_rate_is_rejected():
    with pytest.raises(ValueError):
        SgdConfig(lr=0.0)


@pytest.mark.parametrize(
    "epoch, expected",
    [(0, 0.001), (50, 0.001), (99, 0.001), (100, 0.0001), (149, 0.0001), (150, 0.00001), (199, 0.00001)],
)
def test_piecewise_schedule(epoch, expected):
    assert lr_at_epoch(epoch) == expected


def test_fixed_schedule_ignores_epoch():
    assert lr_at_epoch(170, schedule="fixed", base_lr=0.01) == 0.01


def test_negative_epoch_is_rejected():
    with pytest.raises(ValueError):
        lr_at_epoch(-1)


def test_config_schedule_drives_step_size():
    cfg = SgdConfig(lr=0.1, momentum=0.0, weight_decay=0.0, schedule="piecewise", milestones=(2,))
    assert cfg.lr_for(1) == 0.1
    assert cfg.lr_for(2) == pytest.approx(0.01)
    assert cfg.lr_for(None) == 0.1


def test_unsorted_milestones_are_rejected():
    with pytest.raises(ValueError):
        SgdConfig(milestones=(150, 100))
