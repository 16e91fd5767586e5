import numpy as np
import pytest

from src.Data.Labeled_Batch import LabeledBatch
from src.Data.Synthetic_Blobs import BlobSpec, make_blobs
from src.Engine.Network import Dense, Network, build_mini_resnet, build_mlp


def linear_net(W, b, n_classes=None):
    """Single dense layer over a flat input, weights given explicitly."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_in, n_out = W.shape
    return Network(
        [Dense(in_features=n_in, out_features=n_out)],
        (n_in,),
        n_classes or n_out,
        params=np.concatenate([W.ravel(), b]),
        mode="test",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_blobs():
    spec = BlobSpec(n_classes=2, per_class=24, test_per_class=12, image_size=8, texture_amplitude=0.02, seed=3)
    return make_blobs(spec)


@pytest.fixture
def four_class_labels():
    return np.repeat(np.arange(4), 25)


@pytest.fixture
def tiny_mlp():
    return build_mlp((1, 4, 4), 3, hidden=(6,), activation="silu", seed=7)


@pytest.fixture
def tiny_resnet():
    return build_mini_resnet((1, 6, 6), 2, depth=1, width=2, activation="relu", seed=5)


@pytest.fixture
def random_batch(rng):
    def _make(shape, n_classes):
        images = rng.uniform(0.0, 1.0, size=shape)
        labels = rng.integers(0, n_classes, size=shape[0])
        return LabeledBatch(images=images, labels=labels, n_classes=n_classes)
    return _make
