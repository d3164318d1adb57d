"""Network definitions: layer specs, architecture presets, init and forward.

Five presets cover the whole pipeline: MLP generator/critic for the 2-D
toy mixture, convolutional generator/critic for 16x16 grayscale images,
and a residual enhancer stack. The critic presets carry no batchnorm so
that per-sample input gradients stay uncoupled across the batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng

PRESET_NAMES = ("gen-mlp2d", "critic-mlp2d", "gen-img", "critic-img", "enhancer")


@dataclass
class LayerSpec:
    """One layer of a sequential model; unused fields stay at defaults."""

    kind: str                      # dense|conv|batchnorm|activation|reshape|flatten|upsample2|avgpool2|scale
    in_dim: int = 0
    out_dim: int = 0
    in_ch: int = 0
    out_ch: int = 0
    ksize: int = 3
    stride: int = 1
    pad: int = 1
    channels: int = 0
    fn: str = ""                   # relu|tanh|sigmoid for activation layers
    shape: tuple = ()
    factor: float = 1.0
    init: str = ""                 # he|xavier on dense/conv


@dataclass
class ArchPreset:
    """Hyperparameters that expand into a LayerSpec chain."""

    name: str
    z_dim: int = 64
    toy_z_dim: int = 8
    image_shape: tuple = (1, 16, 16)
    width: int = 64                # MLP hidden width
    gen_channels: tuple = (32, 16)
    critic_channels: tuple = (16, 32)
    depth: int = 7                 # enhancer conv count
    enh_width: int = 32
    out_scale: float = 2.5         # range of the toy generator after tanh

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.name!r}")
        self.image_shape = tuple(self.image_shape)
        self.gen_channels = tuple(self.gen_channels)
        self.critic_channels = tuple(self.critic_channels)
        if self.name == "enhancer" and self.depth < 3:
            raise ValueError("enhancer depth must be at least 3")

    def to_tag(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_tag(cls, tag: str) -> "ArchPreset":
        return cls(**json.loads(tag))


def build_specs(preset: ArchPreset) -> list[LayerSpec]:
    n = preset.name
    if n == "gen-mlp2d":
        w = preset.width
        return [
            LayerSpec("dense", in_dim=preset.toy_z_dim, out_dim=w, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=w, out_dim=w, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=w, out_dim=2, init="xavier"),
            LayerSpec("activation", fn="tanh"),
            LayerSpec("scale", factor=preset.out_scale),
        ]
    if n == "critic-mlp2d":
        w = preset.width
        return [
            LayerSpec("dense", in_dim=2, out_dim=w, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=w, out_dim=w, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=w, out_dim=1, init="xavier"),
        ]
    if n == "gen-img":
        c, h, w = preset.image_shape
        c1, c2 = preset.gen_channels
        h0, w0 = h // 4, w // 4
        return [
            LayerSpec("dense", in_dim=preset.z_dim, out_dim=c1 * h0 * w0, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("reshape", shape=(c1, h0, w0)),
            LayerSpec("upsample2"),
            LayerSpec("conv", in_ch=c1, out_ch=c1, ksize=3, stride=1, pad=1, init="he"),
            LayerSpec("batchnorm", channels=c1),
            LayerSpec("activation", fn="relu"),
            LayerSpec("upsample2"),
            LayerSpec("conv", in_ch=c1, out_ch=c2, ksize=3, stride=1, pad=1, init="he"),
            LayerSpec("batchnorm", channels=c2),
            LayerSpec("activation", fn="relu"),
            LayerSpec("conv", in_ch=c2, out_ch=c, ksize=3, stride=1, pad=1, init="xavier"),
            LayerSpec("activation", fn="tanh"),
        ]
    if n == "critic-img":
        c, h, w = preset.image_shape
        c1, c2 = preset.critic_channels
        flat = c2 * (h // 4) * (w // 4)
        return [
            LayerSpec("conv", in_ch=c, out_ch=c1, ksize=3, stride=1, pad=1, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("avgpool2"),
            LayerSpec("conv", in_ch=c1, out_ch=c2, ksize=3, stride=1, pad=1, init="he"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("avgpool2"),
            LayerSpec("flatten"),
            LayerSpec("dense", in_dim=flat, out_dim=1, init="xavier"),
        ]
    # enhancer: conv+relu, (depth-2) x (conv+bn+relu), conv
    c = preset.image_shape[0]
    w = preset.enh_width
    specs = [
        LayerSpec("conv", in_ch=c, out_ch=w, ksize=3, stride=1, pad=1, init="he"),
        LayerSpec("activation", fn="relu"),
    ]
    for _ in range(preset.depth - 2):
        specs.append(LayerSpec("conv", in_ch=w, out_ch=w, ksize=3, stride=1, pad=1, init="he"))
        specs.append(LayerSpec("batchnorm", channels=w))
        specs.append(LayerSpec("activation", fn="relu"))
    specs.append(LayerSpec("conv", in_ch=w, out_ch=c, ksize=3, stride=1, pad=1, init="xavier"))
    return specs


class Model:
    """Sequential model: specs plus named parameter and buffer tables."""

    def __init__(self, preset: ArchPreset, specs, params, buffers):
        self.preset = preset
        self.specs = specs
        self.params: dict[str, Tensor] = params
        self.buffers: dict[str, np.ndarray] = buffers
        self.mode = "train"

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


def _build(preset: ArchPreset) -> Model:
    """Model skeleton with zeroed parameters, ready to fill."""
    specs = build_specs(preset)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    for i, s in enumerate(specs):
        if s.kind == "dense":
            params[f"{i}.weight"] = Tensor(np.zeros((s.in_dim, s.out_dim)))
            params[f"{i}.bias"] = Tensor(np.zeros(s.out_dim))
        elif s.kind == "conv":
            params[f"{i}.weight"] = Tensor(np.zeros((s.out_ch, s.in_ch, s.ksize, s.ksize)))
            params[f"{i}.bias"] = Tensor(np.zeros(s.out_ch))
        elif s.kind == "batchnorm":
            params[f"{i}.gamma"] = Tensor(np.ones(s.channels))
            params[f"{i}.beta"] = Tensor(np.zeros(s.channels))
            buffers[f"{i}.running_mean"] = np.zeros(s.channels)
            buffers[f"{i}.running_var"] = np.ones(s.channels)
    return Model(preset, specs, params, buffers)


def init_model(preset: ArchPreset, rng: Rng) -> Model:
    """Fresh model: He normal into relu, Xavier uniform elsewhere, zero biases."""
    model = _build(preset)
    for i, s in enumerate(model.specs):
        if s.kind == "dense":
            fan_in, fan_out = s.in_dim, s.out_dim
        elif s.kind == "conv":
            fan_in = s.in_ch * s.ksize * s.ksize
            fan_out = s.out_ch * s.ksize * s.ksize
        else:
            continue
        w = model.params[f"{i}.weight"]
        if s.init == "he":
            w.data[...] = rng.normal_array(w.shape) * math.sqrt(2.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w.data[...] = (rng.uniform_array(w.shape) * 2.0 - 1.0) * limit
    return model


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Normalise per channel; batch stats in train mode, running stats in eval.

    Running buffers are updated in place in train mode:
    running <- momentum * running + (1 - momentum) * batch_stat.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if x.ndim == 2:
        axes = (0,)
        pshape = (1, -1)
    elif x.ndim == 4:
        axes = (0, 2, 3)
        pshape = (1, -1, 1, 1)
    else:
        raise ValueError("batchnorm expects [n,c] or [n,c,h,w]")
    c = gamma.size
    pshape = tuple(c if d == -1 else d for d in pshape)

    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mu = ad.reduce_mean(x, axes=axes, keepdims=True)
        centered = ad.sub(x, ad.broadcast_to(mu, x.shape))
        var = ad.reduce_mean(ad.square(centered), axes=axes, keepdims=True)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.data.reshape(c)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.data.reshape(c)
    else:
        mu = Tensor(running_mean.reshape(pshape))
        var = Tensor(running_var.reshape(pshape))
        centered = ad.sub(x, ad.broadcast_to(mu, x.shape))
    denom = ad.sqrt(ad.add(var, eps))
    normed = ad.div(centered, ad.broadcast_to(denom, x.shape))
    scale = ad.broadcast_to(ad.reshape(gamma, pshape), x.shape)
    shift = ad.broadcast_to(ad.reshape(beta, pshape), x.shape)
    return ad.add(ad.mul(normed, scale), shift)


def _layer_forward(model: Model, i: int, s: LayerSpec, t):
    if s.kind == "dense":
        if t.ndim != 2 or t.shape[1] != s.in_dim:
            raise ValueError(f"layer {i}: dense expected [n,{s.in_dim}], got {tuple(t.shape)}")
        h = ad.matmul(t, model.params[f"{i}.weight"])
        b = ad.reshape(model.params[f"{i}.bias"], (1, s.out_dim))
        return ad.add(h, ad.broadcast_to(b, h.shape))
    if s.kind == "conv":
        if t.ndim != 4 or t.shape[1] != s.in_ch:
            raise ValueError(f"layer {i}: conv expected [n,{s.in_ch},h,w], got {tuple(t.shape)}")
        h = ad.conv2d(t, model.params[f"{i}.weight"], stride=s.stride, pad=s.pad)
        b = ad.reshape(model.params[f"{i}.bias"], (1, s.out_ch, 1, 1))
        return ad.add(h, ad.broadcast_to(b, h.shape))
    if s.kind == "batchnorm":
        return batchnorm_forward(
            t,
            model.params[f"{i}.gamma"],
            model.params[f"{i}.beta"],
            model.buffers[f"{i}.running_mean"],
            model.buffers[f"{i}.running_var"],
            model.mode,
        )
    if s.kind == "activation":
        return {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}[s.fn](t)
    if s.kind == "reshape":
        return ad.reshape(t, (t.shape[0],) + tuple(s.shape))
    if s.kind == "flatten":
        return ad.reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))
    if s.kind == "upsample2":
        return ad.upsample2(t)
    if s.kind == "avgpool2":
        return ad.mul(ad.sumpool2(t), 0.25)
    if s.kind == "scale":
        return ad.mul(t, s.factor)
    raise ValueError(f"unknown layer kind {s.kind!r}")


def forward(model: Model, x, batch: bool = True):
    """Run the layer chain; set batch=False for a single unbatched sample."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    single = not batch
    if single:
        t = ad.reshape(t, (1,) + tuple(t.shape))
    for i, s in enumerate(model.specs):
        t = _layer_forward(model, i, s, t)
    if single:
        t = ad.reshape(t, tuple(t.shape[1:]))
    return t


def enhancer_forward(model: Model, y, batch: bool = True):
    """Residual prediction R(y); same spatial shape as the input."""
    if model.preset.name != "enhancer":
        raise ValueError("enhancer_forward needs an enhancer model")
    return forward(model, y, batch=batch)
