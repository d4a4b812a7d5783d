"""Loss, per-group Adam optimizer, and the deterministic training loop.

The optimizer is Adam (beta1 0.9, beta2 0.999, eps 1e-7) with one learning
rate per parameter group: "conv" covers convolution and transposed
convolution kernels and biases; "korigins" covers origin weights, whose
16-bit magnitudes need learning rates around 100. A group learning rate of
0 freezes that group bit-exactly.

Training is deterministic given (seed, config, dataset): the per-epoch
shuffle is reseeded from the run seed, and the partial final batch is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .metrics import ConfusionCounts, accumulate_confusion, argmax_labels, macc
from .netbuild import Network
from .rng import Rng

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 3
    lr_conv: float = 1e-3
    lr_korigins: float = 100.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_conv < 0 or self.lr_korigins < 0:
            raise ConfigError("learning rates must be >= 0")


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray):
    """Mean pixelwise -log p(true class); returns (loss, grad wrt head logits).

    The gradient uses the fused softmax/cross-entropy form
    (probs - onehot) / pixel_count; probabilities are floored at 1e-12
    inside the log only.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim == 3:
        probs, labels = probs[None], labels[None]
    n, c, h, w = probs.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} incompatible with probs "
                         f"{probs.shape}")
    idx_n, idx_h, idx_w = np.ix_(np.arange(n), np.arange(h), np.arange(w))
    p_true = probs[idx_n, labels, idx_h, idx_w]
    pixel_count = n * h * w
    loss = float(-np.log(np.maximum(p_true, PROB_FLOOR)).sum() / pixel_count)
    grad = probs.copy()
    grad[idx_n, labels, idx_h, idx_w] -= 1.0
    grad /= pixel_count
    return loss, grad


class Adam:
    """Adam with per-group learning rates and persistent moment state."""

    def __init__(self, net: Network, config: TrainConfig):
        self.net = net
        self.config = config
        self.t = 0
        self._m = {name: np.zeros_like(layer.params[pname])
                   for name, layer, pname in net.named_params()}
        self._v = {name: np.zeros_like(layer.params[pname])
                   for name, layer, pname in net.named_params()}

    def _lr(self, group: str) -> float:
        return self.config.lr_conv if group == "conv" else self.config.lr_korigins

    def step(self):
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, layer, pname in self.net.named_params():
            lr = self._lr(layer.group)
            if lr == 0.0:
                continue
            g = layer.grads.get(pname)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * np.square(g)
            layer.params[pname] -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def predict_labels(net: Network, x: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Argmax class map for a stack of inputs, evaluated in batches."""
    out = []
    for start in range(0, x.shape[0], batch_size):
        probs = net.forward(x[start : start + batch_size])
        out.append(argmax_labels(probs))
    return np.concatenate(out, axis=0)


def evaluate_macc(net: Network, x: np.ndarray, y: np.ndarray,
                  batch_size: int = 8) -> float:
    counts = ConfusionCounts(net.spec.class_count)
    for start in range(0, x.shape[0], batch_size):
        probs = net.forward(x[start : start + batch_size])
        counts = accumulate_confusion(argmax_labels(probs),
                                      y[start : start + batch_size],
                                      net.spec.class_count, into=counts)
    return macc(counts)


def train(net: Network, train_data, val_data, config: TrainConfig):
    """Run the full loop; returns per-epoch history of loss and validation MAcc.

    train_data and val_data are (inputs, labels) pairs with inputs shaped
    (N, 1, H, W) and integer labels (N, H, W).
    """
    x, y = train_data
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y)
    if y.size and y.max() >= net.spec.class_count:
        raise ConfigError(f"dataset has label {y.max()} but network predicts "
                          f"{net.spec.class_count} classes")
    val_x, val_y = val_data
    val_x = np.asarray(val_x, dtype=net.dtype)
    val_y = np.asarray(val_y)

    opt = Adam(net, config)
    n = x.shape[0]
    history = []
    for epoch in range(config.epochs):
        if config.shuffle:
            order = np.argsort(Rng(config.seed, stream=1_000_000 + epoch)
                               .uniform_array(n), kind="stable")
        else:
            order = np.arange(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            net.zero_grads()
            probs = net.forward(x[idx])
            loss, grad_logits = cross_entropy_loss(probs, y[idx])
            net.backward(grad_logits, from_logits=True)
            opt.step()
            losses.append(loss)
        val_macc = evaluate_macc(net, val_x, val_y)
        history.append({"epoch": epoch + 1,
                        "loss": float(np.mean(losses)),
                        "val_macc": val_macc})
    return history
