"""Differentiable layers and the sequential network container.

Each layer caches what its backward pass needs during a train-mode
forward; backward walks the layers in reverse and deposits gradients on
the registered :class:`Parameter` handles.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .activations import (
    ActivationKind,
    LRELU_DEFAULT_SLOPE,
    PRELU_INIT_SLOPE,
    ParamConfig,
    PeluParams,
    act_forward,
    effective_params,
    elu_deriv,
    lrelu_deriv,
    pelu_backward_input,
    pelu_backward_params,
    prelu_backward,
    relu_deriv,
    stored_param_grads,
)
from .tensor import Rng, ShapeError


class StateError(RuntimeError):
    """backward called without a matching train-mode forward."""


class Parameter:
    """Handle to one optimizable value: an array for weights, a 0-d array
    for learned scalars. ``constrained`` marks values the optimizer must
    keep above the positivity floor; ``activation_param`` marks activation
    shape parameters so weight decay on them can be toggled globally.
    """

    __slots__ = ("name", "value", "grad", "velocity", "decay", "constrained",
                 "activation_param")

    def __init__(self, name: str, value, *, velocity=None, decay: bool = True,
                 constrained: bool = False, activation_param: bool = False):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.velocity = np.zeros_like(self.value) if velocity is None else velocity
        self.decay = decay
        self.constrained = constrained
        self.activation_param = activation_param

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def he_init(shape, fan_in: int, rng: Rng) -> np.ndarray:
    """Zero-mean normal draw with variance 2 / fan_in."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return rng.normal(shape, std=np.sqrt(2.0 / fan_in))


class Layer:
    def forward(self, x: np.ndarray, train: bool, rng: Rng | None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def _need_cache(self, cache):
        if cache is None:
            raise StateError(f"{type(self).__name__}.backward before train-mode forward")
        return cache


class Linear(Layer):
    """Fully connected layer; flattens higher-rank inputs to (n, features)."""

    def __init__(self, n_in: int, n_out: int, rng: Rng):
        self.n_in = n_in
        self.n_out = n_out
        self.W = Parameter("W", he_init((n_in, n_out), n_in, rng))
        self.b = Parameter("b", np.zeros(n_out), decay=False)
        self._x = None
        self._in_shape = None

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x, train, rng=None):
        x2 = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        if x2.ndim != 2 or x2.shape[1] != self.n_in:
            raise ShapeError(f"Linear: expected (n, {self.n_in}), got {x.shape}")
        if train:
            self._x = x2
            self._in_shape = x.shape
        else:
            self._x = None
        return T.matmul(x2, self.W.value) + self.b.value

    def backward(self, dout):
        x = self._need_cache(self._x)
        self.W.grad[...] = T.matmul(x.T, dout)
        self.b.grad[...] = dout.sum(axis=0)
        dx = T.matmul(dout, self.W.value.T)
        return dx.reshape(self._in_shape)


def im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Unfold (n, c, h, w) into (n*h_out*w_out, c*kh*kw) patch rows, stride 1."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out = h + 2 * pad - kh + 1
    w_out = w + 2 * pad - kw + 1
    cols = np.empty((n, c, kh, kw, h_out, w_out))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + h_out, j:j + w_out]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * h_out * w_out, c * kh * kw)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, pad: int) -> np.ndarray:
    """Fold patch-row gradients back onto the (n, c, h, w) input, stride 1."""
    n, c, h, w = x_shape
    h_out = h + 2 * pad - kh + 1
    w_out = w + 2 * pad - kw + 1
    cols = cols.reshape(n, h_out, w_out, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + h_out, j:j + w_out] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1, with bias."""

    KH = KW = 3
    PAD = 1

    def __init__(self, in_channels: int, out_channels: int, rng: Rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * self.KH * self.KW
        self.W = Parameter("W", he_init((out_channels, in_channels, self.KH, self.KW),
                                        fan_in, rng))
        self.b = Parameter("b", np.zeros(out_channels), decay=False)
        self._cols = None
        self._x_shape = None

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x, train, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2d: expected (n, {self.in_channels}, h, w), got {x.shape}")
        n, _, h, w = x.shape
        cols = im2col(x, self.KH, self.KW, self.PAD)
        wmat = self.W.value.reshape(self.out_channels, -1)
        out = T.matmul(cols, wmat.T) + self.b.value
        if train:
            self._cols = cols
            self._x_shape = x.shape
        else:
            self._cols = None
        return out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout):
        cols = self._need_cache(self._cols)
        n, _, h, w = self._x_shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
        self.W.grad[...] = T.matmul(dmat.T, cols).reshape(self.W.value.shape)
        self.b.grad[...] = dout.sum(axis=(0, 2, 3))
        dcols = T.matmul(dmat, self.W.value.reshape(self.out_channels, -1))
        return col2im(dcols, self._x_shape, self.KH, self.KW, self.PAD)


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; ties go to the lowest window index."""

    def __init__(self):
        self._mask = None
        self._x_shape = None

    def forward(self, x, train, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2x2: expected 4-d input, got {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"MaxPool2x2: spatial dims must be even, got {h}x{w}")
        windows = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, h // 2, w // 2, 4))
        idx = np.argmax(windows, axis=-1)  # first maximum wins
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        if train:
            self._mask = np.eye(4)[idx]
            self._x_shape = x.shape
        else:
            self._mask = None
        return out

    def backward(self, dout):
        mask = self._need_cache(self._mask)
        n, c, h, w = self._x_shape
        dwin = mask * dout[..., None]
        return (dwin.reshape(n, c, h // 2, w // 2, 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, h, w))


class Dropout(Layer):
    """Inverted dropout: scales kept units by 1/(1-rate) at train time so
    eval mode is the identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train, rng=None):
        if not train or self.rate == 0.0:
            self._mask = np.ones_like(x) if train else None
            return x
        if rng is None:
            raise RuntimeError("Dropout needs an rng in train mode")
        keep = rng.uniform(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout * self._need_cache(self._mask)


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial dims for 4-d input),
    with learned per-feature scale and shift and running eval statistics."""

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, num_features: int):
        self.num_features = num_features
        self.gamma = Parameter("gamma", np.ones(num_features), decay=False)
        self.beta = Parameter("beta", np.zeros(num_features), decay=False)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def _to_2d(self, x):
        if x.ndim == 2:
            if x.shape[1] != self.num_features:
                raise ShapeError(f"BatchNorm: expected (n, {self.num_features}), got {x.shape}")
            return x, None
        if x.ndim == 4:
            if x.shape[1] != self.num_features:
                raise ShapeError(f"BatchNorm: expected (n, {self.num_features}, h, w), got {x.shape}")
            n, c, h, w = x.shape
            return x.transpose(0, 2, 3, 1).reshape(n * h * w, c), x.shape
        raise ShapeError(f"BatchNorm: expected 2-d or 4-d input, got {x.shape}")

    @staticmethod
    def _from_2d(x2, shape4):
        if shape4 is None:
            return x2
        n, c, h, w = shape4
        return x2.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def forward(self, x, train, rng=None):
        x2, shape4 = self._to_2d(x)
        if train:
            mean = x2.mean(axis=0)
            var = x2.var(axis=0)  # biased, matches the backward formula
            inv_std = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x2 - mean) * inv_std
            self.running_mean = (1 - self.MOMENTUM) * self.running_mean + self.MOMENTUM * mean
            self.running_var = (1 - self.MOMENTUM) * self.running_var + self.MOMENTUM * var
            self._cache = (xhat, inv_std, shape4)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.EPS)
            xhat = (x2 - self.running_mean) * inv_std
            self._cache = None
        return self._from_2d(xhat * self.gamma.value + self.beta.value, shape4)

    def backward(self, dout):
        xhat, inv_std, shape4 = self._need_cache(self._cache)
        if shape4 is None:
            d2 = dout
        else:
            d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.num_features)
        self.gamma.grad[...] = np.sum(d2 * xhat, axis=0)
        self.beta.grad[...] = np.sum(d2, axis=0)
        m = d2.shape[0]
        dxhat = d2 * self.gamma.value
        dx2 = (inv_std / m) * (m * dxhat
                               - dxhat.sum(axis=0)
                               - xhat * np.sum(dxhat * xhat, axis=0))
        return self._from_2d(dx2, shape4)


class Activation(Layer):
    """Elementwise activation layer; owns the learned state for PELU
    (one stored (p, q) pair per layer) and for the learnable-slope ReLU."""

    def __init__(self, kind: ActivationKind, *, pelu: PeluParams | None = None,
                 slope: float | None = None):
        self.kind = kind
        self.pelu = None
        self.slope = None  # learned (PRELU)
        self.fixed_slope = None  # fixed (LRELU)
        if kind is ActivationKind.PELU:
            self.pelu = pelu if pelu is not None else PeluParams()
            self._pp = Parameter("p", self.pelu.p, velocity=self.pelu.vp,
                                 constrained=True, activation_param=True)
            self._pq = Parameter("q", self.pelu.q, velocity=self.pelu.vq,
                                 constrained=True, activation_param=True)
        elif kind is ActivationKind.PRELU:
            self.slope = Parameter("slope",
                                   PRELU_INIT_SLOPE if slope is None else slope,
                                   activation_param=True)
        elif kind is ActivationKind.LRELU:
            self.fixed_slope = LRELU_DEFAULT_SLOPE if slope is None else float(slope)
            if self.fixed_slope <= 0:
                raise ValueError("leaky slope must be positive")
        self._h = None

    def parameters(self):
        if self.kind is ActivationKind.PELU:
            return [self._pp, self._pq]
        if self.kind is ActivationKind.PRELU:
            return [self.slope]
        return []

    def _slope_value(self) -> float:
        if self.kind is ActivationKind.PRELU:
            return float(self.slope.value)
        if self.kind is ActivationKind.LRELU:
            return self.fixed_slope
        return LRELU_DEFAULT_SLOPE

    def forward(self, x, train, rng=None):
        if self.kind is ActivationKind.PELU:
            a, b = effective_params(self.pelu)
            out = act_forward(self.kind, x, a=a, b=b)
        else:
            out = act_forward(self.kind, x, slope=self._slope_value())
        self._h = x if train else None
        return out

    def backward(self, dout):
        h = self._need_cache(self._h)
        if self.kind is ActivationKind.PELU:
            a, b = effective_params(self.pelu)
            de_da, de_db = pelu_backward_params(h, a, b, dout)
            gp, gq = stored_param_grads(self.pelu, de_da, de_db)
            self._pp.grad[()] = gp
            self._pq.grad[()] = gq
            return pelu_backward_input(h, a, b, dout)
        if self.kind is ActivationKind.PRELU:
            dh, dslope = prelu_backward(h, dout, float(self.slope.value))
            self.slope.grad[()] = dslope
            return dh
        if self.kind is ActivationKind.ELU:
            return dout * elu_deriv(h)
        if self.kind is ActivationKind.RELU:
            return dout * relu_deriv(h)
        return dout * lrelu_deriv(h, self.fixed_slope)


class Network:
    """Ordered layer stack with a named parameter registry.

    ``rng`` feeds stochastic layers (dropout); reassign it to replay a
    deterministic mask sequence.
    """

    def __init__(self, layers, rng: Rng | None = None):
        self.layers = list(layers)
        self.rng = rng
        self._params: list[Parameter] = []
        for i, layer in enumerate(self.layers):
            for p in layer.parameters():
                p.name = f"layer{i}.{p.name}"
                self._params.append(p)
        self._train_ready = False

    def parameters(self) -> list[Parameter]:
        return self._params

    def param(self, name: str) -> Parameter:
        for p in self._params:
            if p.name == name:
                return p
        raise KeyError(name)

    def pelu_layers(self) -> list[tuple[int, PeluParams]]:
        return [(i, l.pelu) for i, l in enumerate(self.layers)
                if isinstance(l, Activation) and l.kind is ActivationKind.PELU]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train, self.rng)
            except ShapeError as e:
                raise ShapeError(f"layer {i}: {e}") from e
        self._train_ready = train
        return x

    def backward(self, dlogits: np.ndarray) -> list[Parameter]:
        """Propagate the loss gradient; returns the parameter registry with
        fresh ``grad`` values."""
        if not self._train_ready:
            raise StateError("backward called before a train-mode forward")
        dout = dlogits
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        self._train_ready = False
        return self._params


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient on the logits.

    Stabilized with log-sum-exp; gradient is (softmax - onehot) / n.
    """
    logits = T.tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_xent: expected (n, classes) logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_xent: expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"softmax_xent: label out of range [0, {k})")
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))
    loss = float(np.mean(lse[:, 0] - logits[np.arange(n), labels]))
    probs = np.exp(logits - lse)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def _activation_factory(kind: ActivationKind, param_config: ParamConfig,
                        slope: float | None):
    def make() -> Activation:
        if kind is ActivationKind.PELU:
            return Activation(kind, pelu=PeluParams(param_config))
        return Activation(kind, slope=slope)
    return make


def build_mlp(widths, kind: ActivationKind, rng: Rng,
              param_config: ParamConfig = ParamConfig.A_INVB,
              slope: float | None = None, net_rng: Rng | None = None) -> Network:
    """Fully connected stack: activation after every layer but the last."""
    if len(widths) < 2:
        raise ValueError("mlp needs at least input and output widths")
    act = _activation_factory(kind, param_config, slope)
    layers: list[Layer] = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        layers.append(Linear(n_in, n_out, rng))
        layers.append(act())
    layers.pop()  # logits stay linear
    return Network(layers, rng=net_rng)


def build_smallnet_lite(in_shape, num_classes: int, kind: ActivationKind, rng: Rng,
                        param_config: ParamConfig = ParamConfig.A_INVB,
                        slope: float | None = None, fc_width: int = 64,
                        net_rng: Rng | None = None) -> Network:
    """Reduced-scale convnet: three (conv, act, pool, dropout) stages with
    8/16/32 filters, then a hidden fully connected stage and a linear
    classifier. Spatial dims must be divisible by 8."""
    c, h, w = in_shape
    if h % 8 or w % 8:
        raise ValueError(f"smallnet-lite needs spatial dims divisible by 8, got {h}x{w}")
    act = _activation_factory(kind, param_config, slope)
    layers: list[Layer] = []
    channels = c
    for filters in (8, 16, 32):
        layers += [Conv2d(channels, filters, rng), act(), MaxPool2x2(), Dropout(0.2)]
        channels = filters
    flat = 32 * (h // 8) * (w // 8)
    layers += [Linear(flat, fc_width, rng), act(), Dropout(0.5),
               Linear(fc_width, num_classes, rng)]
    return Network(layers, rng=net_rng)


def build_conv_mini(in_shape, num_classes: int, kind: ActivationKind, rng: Rng,
                    param_config: ParamConfig = ParamConfig.A_INVB,
                    slope: float | None = None, net_rng: Rng | None = None) -> Network:
    """Small net that exercises every layer type; sized for finite-difference
    gradient checking."""
    c, h, w = in_shape
    layers = [
        Conv2d(c, 3, rng),
        BatchNorm(3),
        _activation_factory(kind, param_config, slope)(),
        MaxPool2x2(),
        Dropout(0.25),
        Linear(3 * (h // 2) * (w // 2), 6, rng),
        _activation_factory(kind, param_config, slope)(),
        Linear(6, num_classes, rng),
    ]
    return Network(layers, rng=net_rng)
