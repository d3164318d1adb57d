"""Residual enhancement: train R(y) to predict the degradation y - x.

Pairs are built by degrading clean images (optional Gaussian blur, then
additive Gaussian noise); the recovered image is y - R(y). Training
minimizes (1/2N) * sum ||R(y_i) - (y_i - x_i)||^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, NumericError, Tensor, backward, reduce_sum, square
from .models import Model, enhancer_forward
from .optim import Adam
from .rng import Rng


@dataclass
class ImagePair:
    clean: np.ndarray
    degraded: np.ndarray
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise ValueError("clean and degraded shapes differ")


@dataclass
class EnhanceConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass
class EpochLog:
    """One row per epoch: (epoch, mean training loss)."""

    rows: list = field(default_factory=list)

    def to_csv(self, path):
        lines = ["epoch,loss"]
        for epoch, loss in self.rows:
            lines.append(f"{epoch},{loss!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _blur1d(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = kernel.size // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    padded = np.pad(a, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=axis)
    return windows @ kernel


def degrade(x, noise_sigma: float, blur_sigma: float, rng: Rng) -> np.ndarray:
    """Separable Gaussian blur (radius ceil(3*sigma_b)), then noise, then clamp.

    Edge padding keeps constants constant; the kernel is normalized to sum 1.
    """
    if noise_sigma < 0.0 or blur_sigma < 0.0:
        raise ValueError("sigma values must be >= 0")
    y = np.asarray(x, dtype=np.float64)
    if blur_sigma > 0.0:
        r = math.ceil(3.0 * blur_sigma)
        t = np.arange(-r, r + 1, dtype=np.float64)
        k = np.exp(-0.5 * (t / blur_sigma) ** 2)
        k /= k.sum()
        y = _blur1d(_blur1d(y, k, axis=-2), k, axis=-1)
    if noise_sigma > 0.0:
        noise = rng.normal_array(y.size).reshape(y.shape) * noise_sigma
        y = y + noise
    return np.clip(y, -1.0, 1.0)


def make_pairs(images, noise_sigma: float, blur_sigma: float, rng: Rng) -> list:
    return [ImagePair(np.asarray(x, dtype=np.float64),
                      degrade(x, noise_sigma, blur_sigma, rng),
                      noise_sigma, blur_sigma)
            for x in images]


def _stack(pairs):
    if len(pairs) == 0:
        raise ValueError("empty batch of pairs")
    x = np.stack([p.clean for p in pairs])
    y = np.stack([p.degraded for p in pairs])
    return x, y


def enhancement_loss(model: Model, pairs) -> Tensor:
    """(1/2N) * sum_i ||R(y_i) - (y_i - x_i)||^2 over a batch of pairs."""
    x, y = _stack(pairs)
    r = enhancer_forward(model, Tensor(y))
    diff = r - Tensor(y - x)
    return reduce_sum(square(diff)) * (0.5 / len(pairs))


def train_enhancer(model: Model, pairs, cfg: EnhanceConfig):
    """Shuffled minibatch Adam; logs the exact per-epoch mean loss.

    Returns (model, EpochLog); the model is updated in place.
    """
    if len(pairs) < 2:
        raise ValueError("need at least two training pairs (batch-norm)")
    rng = Rng(cfg.seed)
    opt = Adam(model.param_list(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    model.train()
    log = EpochLog()

    n, b = len(pairs), cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, b):
            batch = [pairs[i] for i in order[lo:lo + b]]
            if len(batch) < 2:  # batch-norm cannot take a single sample
                continue
            with Graph():
                loss = enhancement_loss(model, batch)
                grads = backward(loss, model.param_list())
            opt.step(grads)
            total += loss.item() * len(batch)
            seen += len(batch)
        mean = total / seen
        if not math.isfinite(mean):
            raise NumericError(f"enhancer loss became non-finite at epoch {epoch}")
        log.rows.append((epoch, mean))
    return model, log


def enhance_image(model: Model, y) -> np.ndarray:
    """y - R(y), clamped to [-1, 1]; the model must be in eval mode."""
    if model.mode != "eval":
        raise ValueError("enhance_image needs the model in eval mode")
    y = np.asarray(y, dtype=np.float64)
    r = enhancer_forward(model, Tensor(y), batch=(y.ndim == 4))
    return np.clip(y - r.data, -1.0, 1.0)
