"""Mask-constrained completion: search the generator's latent space.

Given a corrupted image y and a binary mask m (1 = pixel known), find z
minimizing  ||m*G(z) - m*y||_1 + Q * log(1 - sigmoid(C(G(z))))  and paste the
generator's guess into the holes: m*y + (1-m)*G(z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Graph,
    NumericError,
    Tensor,
    _active,
    absolute,
    backward,
    exp,
    log,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
)
from .models import Model, forward
from .optim import Adam
from .rng import Rng
from .wgan import latent_dim


@dataclass
class CompletionConfig:
    iterations: int = 1250
    q: float = 0.1
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    restarts: int = 3
    # squash the raw critic through a sigmoid before log(1 - .); turning it
    # off takes the critic output as an already-calibrated probability
    squash_critic: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.q < 0.0:
            raise ValueError("q must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


def _check_mask(m, y) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("mask must be a 2-d plane")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    if np.asarray(y).shape[-2:] != m.shape:
        raise ValueError(f"mask {m.shape} does not fit image {np.asarray(y).shape}")
    return m


def apply_mask(m, y) -> np.ndarray:
    """Elementwise m*y with the mask broadcast across channels."""
    y = np.asarray(y, dtype=np.float64)
    m = _check_mask(m, y)
    return y * m


def _as_batch(z) -> Tensor:
    """Lift z to a [n, zdim] tensor; Tensor input stays differentiable."""
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=np.float64))
    if z.ndim == 1:
        return reshape(z, (1, z.size))
    if z.ndim == 2:
        return z
    raise ValueError("z must be a vector or a batch of vectors")


def _ctx_vec(gz: Tensor, y, m) -> Tensor:
    """Per-sample l1 distance between the masked images."""
    mask = np.broadcast_to(m, gz.shape).copy()
    my = np.broadcast_to(apply_mask(m, y), gz.shape).copy()
    diff = gz * Tensor(mask) - Tensor(my)
    return reduce_sum(absolute(diff), axes=tuple(range(1, gz.ndim)))


def _per_vec(gz: Tensor, critic: Model, squash: bool) -> Tensor:
    """Per-sample realism pressure from the critic."""
    c = reshape(forward(critic, gz), (gz.shape[0],))
    if squash:
        # log(1 - sigmoid(c)) = -softplus(c), written in overflow-safe form
        return -(relu(c) + log(exp(-absolute(c)) + 1.0))
    return log(-c + 1.0)


def _batched_losses(z: Tensor, y, m, gen: Model, critic: Model, q: float,
                    squash: bool):
    """Per-sample (contextual, perceptual, total) for a batch of latents.

    Valid restart-by-restart only while the models couple no samples, which
    eval-mode presets guarantee.
    """
    gz = forward(gen, z)
    ctx = _ctx_vec(gz, y, m)
    per = _per_vec(gz, critic, squash)
    return ctx, per, ctx + per * float(q)


def contextual_loss(z, y, m, gen: Model) -> Tensor:
    """||m*G(z) - m*y||_1; batch mean when z is a batch."""
    if _active() is None:
        with Graph():
            return contextual_loss(z, y, m, gen)
    return reduce_mean(_ctx_vec(forward(gen, _as_batch(z)), y, m))


def perceptual_loss(z, gen: Model, critic: Model, squash: bool = True) -> Tensor:
    """log(1 - sigma(C(G(z)))); batch mean when z is a batch."""
    if _active() is None:
        with Graph():
            return perceptual_loss(z, gen, critic, squash)
    return reduce_mean(_per_vec(forward(gen, _as_batch(z)), critic, squash))


def total_loss(z, y, m, gen: Model, critic: Model, q: float = 0.1,
               squash: bool = True) -> Tensor:
    """contextual + q * perceptual, averaged over the batch."""
    if q < 0.0:
        raise ValueError("q must be >= 0")
    if _active() is None:
        with Graph():
            return total_loss(z, y, m, gen, critic, q, squash)
    _, _, tot = _batched_losses(_as_batch(z), y, m, gen, critic, q, squash)
    return reduce_mean(tot)


def optimize_latent(y, m, gen: Model, critic: Model, cfg: CompletionConfig):
    """Adam search over z, all restarts folded into one batch.

    Losses are logged at the top of each iteration, so the trace starts at
    the untouched z0; the returned z includes the final step. Winner is the
    restart with the lowest final total (ties: lowest index).

    Returns (z, trace) with trace rows (iter, contextual, perceptual, total).
    """
    if gen.mode != "eval" or critic.mode != "eval":
        raise ValueError("optimize_latent needs models in eval mode")
    y = np.asarray(y, dtype=np.float64)
    m = _check_mask(m, y)

    rng = Rng(cfg.seed)
    r, zdim = cfg.restarts, latent_dim(gen)
    z = Tensor(rng.normal_array(r * zdim).reshape(r, zdim))
    opt = Adam([z], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    traces = [[] for _ in range(r)]

    for it in range(1, cfg.iterations + 1):
        with Graph():
            ctx, per, tot = _batched_losses(z, y, m, gen, critic,
                                            cfg.q, cfg.squash_critic)
            grads = backward(reduce_sum(tot), [z])
        if not np.all(np.isfinite(tot.data)):
            raise NumericError(f"completion loss became non-finite at iter {it}")
        for i in range(r):
            traces[i].append((it, float(ctx.data[i]), float(per.data[i]),
                              float(tot.data[i])))
        opt.step(grads)
        np.clip(z.data, -1.0, 1.0, out=z.data)

    finals = [t[-1][3] for t in traces]
    best = min(range(r), key=lambda i: (finals[i], i))
    return z.data[best].copy(), traces[best]


def blend_reconstruct(y, m, g_of_z) -> np.ndarray:
    """m*y + (1-m)*G(z), bitwise: kept pixels are y's bytes, holes are G's."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g_of_z, dtype=np.float64)
    if y.shape != g.shape:
        raise ValueError(f"images {y.shape} and {g.shape} do not match")
    m = _check_mask(m, y)
    return np.where(np.broadcast_to(m, y.shape) == 1.0, y, g)


def trace_to_csv(trace, path):
    lines = ["iter,contextual,perceptual,total"]
    for it, ctx, per, tot in trace:
        lines.append(f"{it},{ctx!r},{per!r},{tot!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
