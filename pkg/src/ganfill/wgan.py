"""Wasserstein-GAN training with a gradient penalty on the critic.

The critic maximizes E[C(real)] - E[C(fake)]; written as a minimization its
loss is mean(C(fake)) - mean(C(real)) plus lam * mean((||grad C(x_hat)|| - 1)^2)
where x_hat lies on random interpolation lines between real/fake pairs. The
penalty is built with create_graph so optimizing it trains the critic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Graph,
    NumericError,
    Tensor,
    _active,
    backward,
    pause,
    reduce_mean,
    reduce_sum,
    sqrt,
    square,
)
from .models import Model, forward
from .optim import Adam
from .rng import Rng


@dataclass
class WganConfig:
    epochs: int = 2000
    batch_size: int = 128
    n_critic: int = 5
    lam: float = 10.0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0
    # penalize at fake samples instead of interpolates (literal objective)
    gp_on_fake_only: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("batch_size and n_critic must be >= 1")
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass
class TrainLog:
    """One row per generator cycle: (step, wasserstein, critic_loss, gp, gen_loss)."""

    rows: list = field(default_factory=list)

    def append(self, step, wasserstein, critic_loss, gp, gen_loss):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("steps must be strictly increasing")
        self.rows.append((step, wasserstein, critic_loss, gp, gen_loss))

    def wasserstein(self) -> list:
        return [r[1] for r in self.rows]

    def to_csv(self, path):
        lines = ["step,wasserstein,critic_loss,gp,gen_loss"]
        for step, w, cl, gp, gl in self.rows:
            lines.append(f"{step},{w!r},{cl!r},{gp!r},{gl!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def critic_wasserstein(c_fake: Tensor, c_real: Tensor) -> Tensor:
    """mean(c_fake) - mean(c_real); the critic drives this negative."""
    if c_fake.size == 0 or c_real.size == 0:
        raise ValueError("empty critic batch")
    if c_fake.size != c_real.size:
        raise ValueError("fake and real batches differ in size")
    return reduce_mean(c_fake) - reduce_mean(c_real)


def generator_loss(c_fake: Tensor) -> Tensor:
    """-mean(c_fake): the generator climbs the critic's score."""
    if c_fake.size == 0:
        raise ValueError("empty critic batch")
    return -reduce_mean(c_fake)


def _sample_axes(x) -> tuple:
    return tuple(range(1, x.ndim))


def gradient_penalty(critic: Model, x_real, x_fake, lam: float, rng: Rng,
                     gp_on_fake_only: bool = False) -> Tensor:
    """lam * mean((per-sample ||grad_{x_hat} C(x_hat)||_2 - 1)^2).

    x_hat = eps*real + (1-eps)*fake with eps ~ U[0,1) drawn per sample.
    Records on the ambient graph when one is active, so the result stays
    differentiable with respect to the critic parameters.
    """
    xr = np.asarray(x_real, dtype=np.float64)
    xf = np.asarray(x_fake, dtype=np.float64)
    if xr.shape != xf.shape:
        raise ValueError("real and fake batches must share a shape")
    if _active() is None:
        with Graph():
            return gradient_penalty(critic, xr, xf, lam, rng, gp_on_fake_only)

    if gp_on_fake_only:
        x_hat = Tensor(xf.copy())
    else:
        eps = rng.uniform_array(xr.shape[0]).reshape((-1,) + (1,) * (xr.ndim - 1))
        x_hat = Tensor(eps * xr + (1.0 - eps) * xf)

    c_hat = forward(critic, x_hat)
    # sum trick: the critic couples no samples, so rows of d(sum)/dx_hat are
    # the per-sample gradients
    g_x = backward(reduce_sum(c_hat), [x_hat], create_graph=True)[x_hat]
    norms = sqrt(reduce_sum(square(g_x), axes=_sample_axes(xr)))
    return reduce_mean(square(norms - 1.0)) * float(lam)


def critic_loss_total(critic: Model, x_real, x_fake, lam: float, rng: Rng,
                      gp_on_fake_only: bool = False) -> Tensor:
    """critic_wasserstein + gradient_penalty, minimized over critic params."""
    if _active() is None:
        with Graph():
            return critic_loss_total(critic, x_real, x_fake, lam, rng, gp_on_fake_only)
    c_real = forward(critic, Tensor(np.asarray(x_real, dtype=np.float64)))
    c_fake = forward(critic, Tensor(np.asarray(x_fake, dtype=np.float64)))
    w = critic_wasserstein(c_fake, c_real)
    return w + gradient_penalty(critic, x_real, x_fake, lam, rng, gp_on_fake_only)


def latent_dim(gen: Model) -> int:
    s = gen.specs[0]
    if s.kind != "dense":
        raise ValueError("generator must start with a dense layer")
    return s.in_dim


def _check_finite(step, **values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise NumericError(f"{name} became non-finite at step {step}")


def train_wgan(gen: Model, critic: Model, dataset, cfg: WganConfig):
    """Alternating loop: n_critic critic updates, then one generator update.

    Returns (gen, critic, TrainLog); models are updated in place. One log row
    per generator cycle, with the Wasserstein estimate -critic_wasserstein.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    if data.shape[0] < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")

    rng = Rng(cfg.seed)
    zdim = latent_dim(gen)
    opt_c = Adam(critic.param_list(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_g = Adam(gen.param_list(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    gen.train()
    critic.train()
    log = TrainLog()

    n, b = data.shape[0], cfg.batch_size
    for step in range(1, cfg.epochs + 1):
        w_val = cl_val = gp_val = 0.0
        for _ in range(cfg.n_critic):
            xr = data[rng.integers(n, size=b)]
            z = rng.normal_array(b * zdim).reshape(b, zdim)
            with pause():
                xf = forward(gen, Tensor(z)).data
            with Graph():
                c_real = forward(critic, Tensor(xr))
                c_fake = forward(critic, Tensor(xf))
                w = critic_wasserstein(c_fake, c_real)
                gp = gradient_penalty(critic, xr, xf, cfg.lam, rng,
                                      cfg.gp_on_fake_only)
                loss = w + gp
                grads = backward(loss, critic.param_list())
            opt_c.step(grads)
            w_val, gp_val, cl_val = w.item(), gp.item(), loss.item()

        z = rng.normal_array(b * zdim).reshape(b, zdim)
        with Graph():
            c_fake = forward(critic, forward(gen, Tensor(z)))
            gl = generator_loss(c_fake)
            grads = backward(gl, gen.param_list())
        opt_g.step(grads)
        gl_val = gl.item()

        _check_finite(step, wasserstein=w_val, critic_loss=cl_val,
                      gp=gp_val, gen_loss=gl_val)
        log.append(step, -w_val, cl_val, gp_val, gl_val)

    return gen, critic, log
