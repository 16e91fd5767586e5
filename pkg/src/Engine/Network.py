"""
Minimal differentiable network engine in float64 NumPy.

A `Network` is an ordered list of layer descriptors (pydantic models) plus one
flat parameter vector theta. Layers read their weights as reshaped views of
theta, so optimizers and federated averaging only ever see a single vector.
BatchNorm running statistics live in `buffers`, outside theta.

Arrays held by a Network are never modified in place: every update returns a
new Network, which makes instances safe to hand to other threads.
"""

import logging
from typing import Annotated, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from src.Auxiliary.Errors import ShapeMismatchError
from src.Engine.Activations import ActivationKind, Mode, act_derivative, act_eval_with_slopes

logger = logging.getLogger(__name__)

Tensor = np.ndarray


class _LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Dense(_LayerSpec):
    kind: Literal["dense"] = "dense"
    in_features: int = Field(gt=0)
    out_features: int = Field(gt=0)


class Conv2d(_LayerSpec):
    """Stride-1 convolution with zero 'same' padding; kernel_size must be odd."""
    kind: Literal["conv2d"] = "conv2d"
    in_channels: int = Field(gt=0)
    out_channels: int = Field(gt=0)
    kernel_size: int = Field(default=3, gt=0)


class BatchNorm(_LayerSpec):
    kind: Literal["batchnorm"] = "batchnorm"
    num_features: int = Field(gt=0)
    momentum: float = 0.1
    eps: float = 1e-5


class Activation(_LayerSpec):
    kind: Literal["activation"] = "activation"


class Flatten(_LayerSpec):
    kind: Literal["flatten"] = "flatten"


class ResidualBlock(_LayerSpec):
    """conv -> [bn] -> act -> conv -> [bn], added to an identity shortcut. No down-sampling."""
    kind: Literal["residual"] = "residual"
    channels: int = Field(gt=0)
    kernel_size: int = Field(default=3, gt=0)
    batchnorm: bool = True
    momentum: float = 0.1
    eps: float = 1e-5


LayerSpec = Annotated[
    Union[Dense, Conv2d, BatchNorm, Activation, Flatten, ResidualBlock], Field(discriminator="kind")
]


def _param_layout(layer) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) list of the layer's slice of theta."""
    if isinstance(layer, Dense):
        return [("W", (layer.in_features, layer.out_features)), ("b", (layer.out_features,))]
    if isinstance(layer, Conv2d):
        k = layer.kernel_size
        return [("W", (layer.out_channels, layer.in_channels, k, k)), ("b", (layer.out_channels,))]
    if isinstance(layer, BatchNorm):
        return [("gamma", (layer.num_features,)), ("beta", (layer.num_features,))]
    if isinstance(layer, ResidualBlock):
        c, k = layer.channels, layer.kernel_size
        names = [("conv1.W", (c, c, k, k)), ("conv1.b", (c,))]
        if layer.batchnorm:
            names += [("bn1.gamma", (c,)), ("bn1.beta", (c,))]
        names += [("conv2.W", (c, c, k, k)), ("conv2.b", (c,))]
        if layer.batchnorm:
            names += [("bn2.gamma", (c,)), ("bn2.beta", (c,))]
        return names
    return []


def _buffer_layout(layer) -> List[Tuple[str, int]]:
    if isinstance(layer, BatchNorm):
        return [("", layer.num_features)]
    if isinstance(layer, ResidualBlock) and layer.batchnorm:
        return [("bn1", layer.channels), ("bn2", layer.channels)]
    return []


def _output_shape(index: int, layer, shape: Tuple[int, ...]) -> Tuple[int, ...]:
    name = f"#{index} {layer.kind}"
    if isinstance(layer, Dense):
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ShapeMismatchError(name, (layer.in_features,), shape)
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        if layer.kernel_size % 2 == 0:
            raise ShapeMismatchError(name, "odd kernel_size", layer.kernel_size)
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeMismatchError(name, (layer.in_channels, "H", "W"), shape)
        return (layer.out_channels, shape[1], shape[2])
    if isinstance(layer, BatchNorm):
        if shape[0] != layer.num_features:
            raise ShapeMismatchError(name, (layer.num_features, "..."), shape)
        return shape
    if isinstance(layer, ResidualBlock):
        if layer.kernel_size % 2 == 0:
            raise ShapeMismatchError(name, "odd kernel_size", layer.kernel_size)
        if len(shape) != 3 or shape[0] != layer.channels:
            raise ShapeMismatchError(name, (layer.channels, "H", "W"), shape)
        return shape
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    return shape


class Network:
    """Layered model with a flat parameter vector and a train/test mode."""

    def __init__(
        self,
        layers: Sequence[LayerSpec],
        input_shape: Sequence[int],
        n_classes: int,
        activation: Union[str, ActivationKind] = "relu",
        params: Optional[np.ndarray] = None,
        buffers: Optional[Dict[str, np.ndarray]] = None,
        mode: Mode = "train",
        init_seed: int = 0,
    ):
        self.layers: Tuple = tuple(layers)
        self.input_shape: Tuple[int, ...] = tuple(int(s) for s in input_shape)
        self.n_classes = int(n_classes)
        self.activation = ActivationKind.parse(activation)
        self.mode: Mode = mode
        self.init_seed = int(init_seed)

        shape = self.input_shape
        self._offsets: List[Tuple[int, int]] = []
        cursor = 0
        for i, layer in enumerate(self.layers):
            shape = _output_shape(i, layer, shape)
            size = sum(int(np.prod(s)) for _, s in _param_layout(layer))
            self._offsets.append((cursor, cursor + size))
            cursor += size
        if shape != (self.n_classes,):
            raise ShapeMismatchError("output", (self.n_classes,), shape)
        self._n_params = cursor

        if params is None:
            params = self._initial_params(self.init_seed)
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != self._n_params:
            raise ShapeMismatchError("params", self._n_params, params.size)
        params.flags.writeable = False
        self.params = params

        if buffers is None:
            buffers = self._initial_buffers()
        self.buffers = {k: _frozen(v) for k, v in buffers.items()}

    # -- structure -----------------------------------------------------------------

    @property
    def n_params(self) -> int:
        return self._n_params

    def layer_slice(self, index: int) -> slice:
        start, end = self._offsets[index]
        return slice(start, end)

    def layer_params(self, index: int, params: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """Named, reshaped views of layer `index`'s part of theta."""
        vec = (self.params if params is None else params)[self.layer_slice(index)]
        views, cursor = {}, 0
        for name, shape in _param_layout(self.layers[index]):
            size = int(np.prod(shape))
            views[name] = vec[cursor:cursor + size].reshape(shape)
            cursor += size
        return views

    def _initial_params(self, seed: int) -> np.ndarray:
        # fan-in scaled uniform for dense/conv weights, zero biases, unit BN scale
        rng = np.random.default_rng(seed)
        chunks = []
        for layer in self.layers:
            for name, shape in _param_layout(layer):
                leaf = name.split(".")[-1]
                if leaf == "W":
                    fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                    bound = 1.0 / np.sqrt(fan_in)
                    chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
                elif leaf == "gamma":
                    chunks.append(np.ones(int(np.prod(shape))))
                else:
                    chunks.append(np.zeros(int(np.prod(shape))))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def _initial_buffers(self) -> Dict[str, np.ndarray]:
        buffers = {}
        for i, layer in enumerate(self.layers):
            for sub, size in _buffer_layout(layer):
                key = f"{i}.{sub}" if sub else f"{i}"
                buffers[f"{key}.mean"] = np.zeros(size)
                buffers[f"{key}.var"] = np.ones(size)
        return buffers

    # -- value semantics -----------------------------------------------------------

    def _replace(self, **changes) -> "Network":
        kwargs = dict(
            layers=self.layers,
            input_shape=self.input_shape,
            n_classes=self.n_classes,
            activation=self.activation,
            params=self.params,
            buffers=self.buffers,
            mode=self.mode,
            init_seed=self.init_seed,
        )
        kwargs.update(changes)
        return Network(**kwargs)

    def copy(self) -> "Network":
        return self._replace(params=self.params.copy(), buffers={k: v.copy() for k, v in self.buffers.items()})

    def with_params(self, params: np.ndarray) -> "Network":
        return self._replace(params=params)

    def with_buffers(self, buffers: Dict[str, np.ndarray]) -> "Network":
        return self._replace(buffers=buffers)

    def in_mode(self, mode: Mode) -> "Network":
        return self if mode == self.mode else self._replace(mode=mode)

    def absorb_batch_stats(self, stats: Dict[str, Tuple[np.ndarray, np.ndarray]]) -> "Network":
        """Fold batch statistics from a train-mode pass into the running buffers."""
        if not stats:
            return self
        buffers = dict(self.buffers)
        for key, (mean, var) in stats.items():
            momentum = self._bn_momentum(key)
            buffers[f"{key}.mean"] = (1.0 - momentum) * buffers[f"{key}.mean"] + momentum * mean
            buffers[f"{key}.var"] = (1.0 - momentum) * buffers[f"{key}.var"] + momentum * var
        return self.with_buffers(buffers)

    def _bn_momentum(self, key: str) -> float:
        return self.layers[int(key.split(".")[0])].momentum

    def describe(self) -> List[dict]:
        return [layer.model_dump() for layer in self.layers]

    def __repr__(self) -> str:
        kinds = ", ".join(layer.kind for layer in self.layers)
        return f"Network([{kinds}], activation={self.activation.kind}, n_params={self.n_params}, mode={self.mode})"


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.flags.writeable = False
    return out


# -- layer kernels -----------------------------------------------------------------


def _conv_forward(x: Tensor, W: Tensor, b: Tensor):
    k = W.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    y = np.einsum("bchwij,ocij->bohw", windows, W, optimize=True) + b[None, :, None, None]
    return y, (windows, x.shape, W)


def _conv_backward(dy: Tensor, cache):
    windows, x_shape, W = cache
    k = W.shape[-1]
    p = k // 2
    _, _, H, Wd = x_shape
    dW = np.einsum("bchwij,bohw->ocij", windows, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros((x_shape[0], x_shape[1], H + 2 * p, Wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + Wd] += np.einsum("bohw,oc->bchw", dy, W[:, :, i, j], optimize=True)
    return dxp[:, :, p:p + H, p:p + Wd], dW, db


def _bn_axes(x: Tensor) -> Tuple[int, ...]:
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _bn_shape(x: Tensor, v: Tensor) -> Tensor:
    return v if x.ndim == 2 else v[None, :, None, None]


def _bn_forward(x: Tensor, gamma: Tensor, beta: Tensor, mode: Mode, running_mean, running_var, eps: float):
    axes = _bn_axes(x)
    if mode == "train":
        n = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - _bn_shape(x, mean)) * _bn_shape(x, inv)
        unbiased = var * n / (n - 1) if n > 1 else var
        stats = (mean, unbiased)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - _bn_shape(x, running_mean)) * _bn_shape(x, inv)
        stats = None
    y = _bn_shape(x, gamma) * xhat + _bn_shape(x, beta)
    return y, (xhat, inv, gamma, mode), stats


def _bn_backward(dy: Tensor, cache):
    xhat, inv, gamma, mode = cache
    axes = _bn_axes(dy)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * _bn_shape(dy, gamma)
    if mode == "train":
        n = dy.size // dy.shape[1]
        dx = _bn_shape(dy, inv) / n * (
            n * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
    else:
        dx = dxhat * _bn_shape(dy, inv)
    return dx, dgamma, dbeta


def _act_forward(net: Network, x: Tensor, rng):
    y, slopes = act_eval_with_slopes(net.activation, x, net.mode, rng)
    return y, (x, slopes)


def _act_backward(net: Network, dy: Tensor, cache):
    x, slopes = cache
    return dy * act_derivative(net.activation, x, net.mode, slopes)


# -- forward / backward ------------------------------------------------------------


class _Pass(NamedTuple):
    logits: Tensor
    caches: list
    stats: Dict[str, Tuple[np.ndarray, np.ndarray]]


def _check_input(net: Network, batch: Tensor) -> Tensor:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != len(net.input_shape) + 1 or tuple(batch.shape[1:]) != net.input_shape:
        raise ShapeMismatchError("input", ("B",) + net.input_shape, tuple(batch.shape))
    return batch


def _run_forward(net: Network, batch: Tensor, rng: Optional[np.random.Generator]) -> _Pass:
    x = _check_input(net, batch)
    caches, stats = [], {}
    for i, layer in enumerate(net.layers):
        p = net.layer_params(i)
        if isinstance(layer, Dense):
            caches.append(x)
            x = x @ p["W"] + p["b"]
        elif isinstance(layer, Conv2d):
            x, cache = _conv_forward(x, p["W"], p["b"])
            caches.append(cache)
        elif isinstance(layer, BatchNorm):
            key = f"{i}"
            x, cache, st = _bn_forward(
                x, p["gamma"], p["beta"], net.mode,
                net.buffers[f"{key}.mean"], net.buffers[f"{key}.var"], layer.eps,
            )
            caches.append(cache)
            if st is not None:
                stats[key] = st
        elif isinstance(layer, Activation):
            x, cache = _act_forward(net, x, rng)
            caches.append(cache)
        elif isinstance(layer, Flatten):
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, ResidualBlock):
            x, cache = _residual_forward(net, i, layer, p, x, rng, stats)
            caches.append(cache)
        else:
            raise ValueError(f"Unsupported layer kind '{layer.kind}'")
    return _Pass(x, caches, stats)


def _residual_forward(net: Network, i: int, layer: ResidualBlock, p, x, rng, stats):
    cache = {}
    h, cache["conv1"] = _conv_forward(x, p["conv1.W"], p["conv1.b"])
    if layer.batchnorm:
        h, cache["bn1"], st = _bn_forward(
            h, p["bn1.gamma"], p["bn1.beta"], net.mode,
            net.buffers[f"{i}.bn1.mean"], net.buffers[f"{i}.bn1.var"], layer.eps,
        )
        if st is not None:
            stats[f"{i}.bn1"] = st
    h, cache["act"] = _act_forward(net, h, rng)
    h, cache["conv2"] = _conv_forward(h, p["conv2.W"], p["conv2.b"])
    if layer.batchnorm:
        h, cache["bn2"], st = _bn_forward(
            h, p["bn2.gamma"], p["bn2.beta"], net.mode,
            net.buffers[f"{i}.bn2.mean"], net.buffers[f"{i}.bn2.var"], layer.eps,
        )
        if st is not None:
            stats[f"{i}.bn2"] = st
    return x + h, cache


def _residual_backward(net: Network, layer: ResidualBlock, dy, cache) -> Tuple[Tensor, List[np.ndarray]]:
    grads: Dict[str, np.ndarray] = {}
    dh = dy
    if layer.batchnorm:
        dh, grads["bn2.gamma"], grads["bn2.beta"] = _bn_backward(dh, cache["bn2"])
    dh, grads["conv2.W"], grads["conv2.b"] = _conv_backward(dh, cache["conv2"])
    dh = _act_backward(net, dh, cache["act"])
    if layer.batchnorm:
        dh, grads["bn1.gamma"], grads["bn1.beta"] = _bn_backward(dh, cache["bn1"])
    dh, grads["conv1.W"], grads["conv1.b"] = _conv_backward(dh, cache["conv1"])
    ordered = [grads[name] for name, _ in _param_layout(layer)]
    return dy + dh, ordered


def _run_backward(net: Network, fwd: _Pass, dlogits: Tensor) -> Tuple[Tensor, Tensor]:
    grad_params = np.zeros(net.n_params)
    dx = dlogits
    for i in reversed(range(len(net.layers))):
        layer, cache = net.layers[i], fwd.caches[i]
        pieces: List[np.ndarray] = []
        if isinstance(layer, Dense):
            W = net.layer_params(i)["W"]
            pieces = [cache.T @ dx, dx.sum(axis=0)]
            dx = dx @ W.T
        elif isinstance(layer, Conv2d):
            dx, dW, db = _conv_backward(dx, cache)
            pieces = [dW, db]
        elif isinstance(layer, BatchNorm):
            dx, dgamma, dbeta = _bn_backward(dx, cache)
            pieces = [dgamma, dbeta]
        elif isinstance(layer, Activation):
            dx = _act_backward(net, dx, cache)
        elif isinstance(layer, Flatten):
            dx = dx.reshape(cache)
        elif isinstance(layer, ResidualBlock):
            dx, pieces = _residual_backward(net, layer, dx, cache)
        if pieces:
            grad_params[net.layer_slice(i)] = np.concatenate([g.ravel() for g in pieces])
    return grad_params, dx


def forward(net: Network, batch: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Logits [B, n_classes]. Train-mode RReLU draws its slopes from `rng`."""
    return _run_forward(net, batch, rng).logits


def logits_and_vjp(
    net: Network,
    batch: Tensor,
    dlogits: Tensor,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Back-propagate an arbitrary upstream gradient on the logits.

    Returns (logits, grad_params, grad_input) where the gradients are those of
    sum(dlogits * logits).
    """
    fwd = _run_forward(net, batch, rng)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != fwd.logits.shape:
        raise ShapeMismatchError("logits", fwd.logits.shape, dlogits.shape)
    grad_params, grad_input = _run_backward(net, fwd, dlogits)
    return fwd.logits, grad_params, grad_input


def one_hot(labels: Sequence[int], n_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets: Tensor) -> Tuple[float, Tensor]:
    """Mean soft-target cross-entropy and its gradient w.r.t. the logits."""
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape[0] == 0:
        raise ValueError("Cannot compute a loss on an empty batch")
    if targets.shape != logits.shape:
        raise ShapeMismatchError("targets", logits.shape, targets.shape)
    row_sums = targets.sum(axis=1)
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > 1e-9)
    if bad.size:
        raise ValueError(f"Target row {int(bad[0])} sums to {row_sums[bad[0]]!r}, expected 1")
    logp = log_softmax(logits)
    batch = logits.shape[0]
    loss = float(-(targets * logp).sum() / batch)
    dlogits = (np.exp(logp) - targets) / batch
    return loss, dlogits


class LossGrads(NamedTuple):
    loss: float
    grad_params: Tensor
    grad_input: Tensor


def loss_and_grads(
    net: Network,
    batch: Tensor,
    targets: Tensor,
    rng: Optional[np.random.Generator] = None,
    batch_stats: Optional[dict] = None,
) -> LossGrads:
    """Cross-entropy against soft targets with gradients for theta and the input.

    When `batch_stats` is a dict, train-mode BatchNorm statistics of this pass
    are written into it for `Network.absorb_batch_stats`.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[:1] == (0,):
        raise ValueError("Cannot compute a loss on an empty batch")
    fwd = _run_forward(net, batch, rng)
    loss, dlogits = softmax_cross_entropy(fwd.logits, targets)
    grad_params, grad_input = _run_backward(net, fwd, dlogits)
    if batch_stats is not None:
        batch_stats.update(fwd.stats)
    return LossGrads(loss, grad_params, grad_input)


def predict(net: Network, batch: Tensor, batch_size: int = 256) -> np.ndarray:
    """Test-mode argmax labels; ties go to the lowest class index."""
    view = net.in_mode("test")
    batch = np.asarray(batch, dtype=np.float64)
    out = [np.argmax(forward(view, batch[i:i + batch_size]), axis=1) for i in range(0, len(batch), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# -- builders ----------------------------------------------------------------------


def build_mini_resnet(
    input_shape: Sequence[int],
    n_classes: int,
    depth: int = 1,
    width: int = 4,
    activation: Union[str, ActivationKind] = "relu",
    batchnorm: bool = True,
    seed: int = 0,
) -> Network:
    """Residual mini network: 3x3 stem, `depth` identity-shortcut blocks, flatten, dense head.

    No block down-samples, so every feature map keeps the input's spatial size.
    """
    if depth < 1 or width < 1:
        raise ValueError(f"depth and width must be >= 1 (got depth={depth}, width={width})")
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2 (got {n_classes})")
    if len(input_shape) != 3:
        raise ShapeMismatchError("input", ("C", "H", "W"), tuple(input_shape))
    channels, height, wide = (int(s) for s in input_shape)
    layers: List = [Conv2d(in_channels=channels, out_channels=width, kernel_size=3)]
    if batchnorm:
        layers.append(BatchNorm(num_features=width))
    layers.append(Activation())
    for _ in range(depth):
        layers += [ResidualBlock(channels=width, kernel_size=3, batchnorm=batchnorm), Activation()]
    layers += [Flatten(), Dense(in_features=width * height * wide, out_features=n_classes)]
    return Network(layers, input_shape, n_classes, activation, init_seed=seed)


def build_mlp(
    input_shape: Sequence[int],
    n_classes: int,
    hidden: Sequence[int] = (32,),
    activation: Union[str, ActivationKind] = "relu",
    batchnorm: bool = False,
    seed: int = 0,
) -> Network:
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2 (got {n_classes})")
    layers: List = [Flatten()] if len(input_shape) > 1 else []
    width = int(np.prod(input_shape))
    for size in hidden:
        layers.append(Dense(in_features=width, out_features=int(size)))
        if batchnorm:
            layers.append(BatchNorm(num_features=int(size)))
        layers.append(Activation())
        width = int(size)
    layers.append(Dense(in_features=width, out_features=n_classes))
    return Network(layers, input_shape, n_classes, activation, init_seed=seed)
