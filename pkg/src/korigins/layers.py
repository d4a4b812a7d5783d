"""Trainable layer objects with forward/backward passes and parameter storage.

Each layer owns its parameter and gradient arrays (identical shapes) plus a
forward-pass cache consumed by backward. Layers carry a parameter-group tag
("conv" or "korigins") so the optimizer can apply per-group learning rates.
A layer instance is single-owner during forward/backward; distinct instances
may run in parallel.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import Rng
from . import tensor_ops as ops


# ----------------------------------------------------------------------
# functional ops


def korigins_forward(x: np.ndarray, weights) -> np.ndarray:
    """Concatenate x with one shifted copy x - w_k per weight, along channels.

    The original channels always come first, then the K shifted blocks in
    weight order; nothing is clipped. Output has C * (K + 1) channels.
    """
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size == 0:
        raise ConfigError("K-Origins needs at least one weight")
    x = np.asarray(x)
    ch_axis = x.ndim - 3
    return np.concatenate([x] + [x - w for w in weights], axis=ch_axis)


def korigins_backward(upstream: np.ndarray, k: int):
    """Gradients of korigins_forward given K = number of weights.

    grad_input sums the K + 1 channel blocks; grad_weights[k] is minus the
    sum of upstream over block k's entries.
    """
    upstream = np.asarray(upstream)
    ch_axis = upstream.ndim - 3
    total = upstream.shape[ch_axis]
    if total % (k + 1):
        raise ShapeError(f"{total} channels not divisible into {k + 1} blocks")
    blocks = np.split(upstream, k + 1, axis=ch_axis)
    grad_input = np.sum(blocks, axis=0)
    grad_weights = np.array([-b.sum() for b in blocks[1:]])
    return grad_input, grad_weights


def korigins_clamp_init(classes) -> np.ndarray:
    """Bracket each class's intensity distribution: mu - 2*sigma, mu + 2*sigma.

    ``classes`` is an ordered sequence of (mu, sigma); output has 2 weights
    per class, in class order.
    """
    classes = list(classes)
    if not classes:
        raise ConfigError("clamp initialization needs at least one class")
    out = []
    for mu, sigma in classes:
        out.extend((mu - 2.0 * sigma, mu + 2.0 * sigma))
    return np.array(out, dtype=float)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    # subgradient at exactly 0 is defined as 0
    return upstream * (x > 0)


def softmax_pixelwise_forward(x):
    """Softmax over the channel axis, per pixel. Outputs sum to 1."""
    x = np.asarray(x)
    ch_axis = x.ndim - 3
    z = x - x.max(axis=ch_axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=ch_axis, keepdims=True)


def softmax_pixelwise_backward(probs, upstream):
    ch_axis = probs.ndim - 3
    dot = (probs * upstream).sum(axis=ch_axis, keepdims=True)
    return probs * (upstream - dot)


def concat_forward(parts):
    """Channel-wise concatenation; partners must share spatial dims."""
    parts = [np.asarray(p) for p in parts]
    spatial = {p.shape[-2:] for p in parts}
    if len(spatial) != 1:
        raise ShapeError(f"concat partners differ in spatial dims: {sorted(spatial)}")
    return np.concatenate(parts, axis=parts[0].ndim - 3)


def concat_backward(upstream, channel_sizes):
    ch_axis = upstream.ndim - 3
    if upstream.shape[ch_axis] != sum(channel_sizes):
        raise ShapeError(f"upstream has {upstream.shape[ch_axis]} channels, "
                         f"expected {sum(channel_sizes)}")
    splits = np.cumsum(channel_sizes)[:-1]
    return np.split(upstream, splits, axis=ch_axis)


def init_conv_params(rng: Rng, fan_in: int, fan_out: int, k: int):
    """Glorot-uniform kernels (C_out, C_in, k, k) and zero biases."""
    limit = np.sqrt(6.0 / (fan_in * k * k + fan_out * k * k))
    kernels = (rng.uniform_array(fan_out * fan_in * k * k) * 2.0 - 1.0) * limit
    return kernels.reshape(fan_out, fan_in, k, k), np.zeros(fan_out)


# ----------------------------------------------------------------------
# layer objects


class Layer:
    """Base: parameter/gradient storage plus a forward cache."""

    kind = "base"
    group = "conv"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def zero_grads(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def astype(self, dtype):
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
        self.grads = {}
        return self

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, k, stride=1, padding="same",
                 activation="relu", bias=True, rng: Rng | None = None):
        super().__init__()
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        self.activation = activation
        self.has_bias = bias
        rng = rng or Rng(0)
        kernels, b = init_conv_params(rng, in_ch, out_ch, k)
        self.params["kernels"] = kernels
        if bias:
            self.params["bias"] = b

    def forward(self, x):
        bias = self.params.get("bias", np.zeros(self.out_ch, dtype=x.dtype))
        z = ops.conv2d_forward(x, self.params["kernels"], bias,
                               self.stride, self.padding)
        self.cache = (x, z if self.activation == "relu" else None)
        return relu_forward(z) if self.activation == "relu" else z

    def backward(self, upstream):
        x, z = self.cache
        if self.activation == "relu":
            upstream = relu_backward(z, upstream)
        gx, gk, gb = ops.conv2d_backward(x, self.params["kernels"], upstream,
                                         self.stride, self.padding)
        self.grads["kernels"] = gk
        if self.has_bias:
            self.grads["bias"] = gb
        return gx


class TConv2D(Layer):
    kind = "tconv"

    def __init__(self, in_ch, out_ch, rng: Rng | None = None):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        rng = rng or Rng(0)
        kernels, b = init_conv_params(rng, in_ch, out_ch, 2)
        # transposed layout: (C_in, C_out, 2, 2)
        self.params["kernels"] = kernels.transpose(1, 0, 2, 3).copy()
        self.params["bias"] = b

    def forward(self, x):
        self.cache = x
        return ops.tconv2d_forward(x, self.params["kernels"], self.params["bias"])

    def backward(self, upstream):
        gx, gk, gb = ops.tconv2d_backward(self.cache, self.params["kernels"], upstream)
        self.grads["kernels"] = gk
        self.grads["bias"] = gb
        return gx


class MaxPool2x2(Layer):
    kind = "pool"

    def forward(self, x):
        out, arg = ops.maxpool2x2_forward(x)
        self.cache = arg
        return out

    def backward(self, upstream):
        return ops.maxpool2x2_backward(self.cache, upstream)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self.cache = x
        return relu_forward(x)

    def backward(self, upstream):
        return relu_backward(self.cache, upstream)


class SoftmaxPixelwise(Layer):
    kind = "softmax"

    def forward(self, x):
        probs = softmax_pixelwise_forward(x)
        self.cache = probs
        return probs

    def backward(self, upstream):
        return softmax_pixelwise_backward(self.cache, upstream)


class KOrigins(Layer):
    """Emits the input plus one shifted copy per trainable origin weight."""

    kind = "korigins"
    group = "korigins"

    def __init__(self, weights):
        super().__init__()
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.size == 0:
            raise ConfigError("K-Origins needs at least one weight")
        self.params["weights"] = weights

    @property
    def k(self):
        return self.params["weights"].size

    def forward(self, x):
        return korigins_forward(x, self.params["weights"])

    def backward(self, upstream):
        gx, gw = korigins_backward(upstream, self.k)
        self.grads["weights"] = gw.astype(self.params["weights"].dtype)
        return gx


class ConcatChannels(Layer):
    """Joins the main path with an earlier layer's output (skip connection)."""

    kind = "concat"

    def __init__(self, skip_from: int):
        super().__init__()
        self.skip_from = skip_from

    def forward(self, x, skip):
        self.cache = (x.shape[-3], skip.shape[-3])
        return concat_forward([x, skip])

    def backward(self, upstream):
        main, skip = concat_backward(upstream, self.cache)
        return main, skip
