"""Command-line surface: data generation, training, completion, evaluation.

Config is a JSON document validated against a fixed schema; --set overrides
win over the file, and the resolved config is echoed to <out>/config.json so
every run is reproducible from its output directory alone.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .autodiff import NumericError, Tensor
from .completion import (
    CompletionConfig,
    apply_mask,
    blend_reconstruct,
    optimize_latent,
    trace_to_csv,
)
from .data import (
    CheckpointError,
    CodecError,
    gen_faces,
    gen_mixture2d,
    load_checkpoint,
    make_mask,
    read_image,
    save_checkpoint,
    write_dataset,
    write_image,
)
from .enhance import EnhanceConfig, enhance_image, make_pairs, train_enhancer
from .metrics import QualityReport, psnr, ssim
from .models import ArchPreset, forward, init_model
from .rng import Rng
from .wgan import WganConfig, train_wgan


class ConfigError(Exception):
    """Unknown key, wrong type, or malformed config document."""


DEFAULTS = {
    "seed": 0,
    "data": {
        "kind": "faces",            # faces | mixture2d
        "count": 200,
        "size": 16,
        "modes": 8,
        "radius": 2.0,
        "sigma": 0.05,
        "train_fraction": 0.9,
        "mask": "center_block",     # center_block | random_block | random_pixels
        "mask_size": 8,
        "mask_fraction": 0.25,
    },
    "models": {
        "z_dim": 64,
        "toy_z_dim": 8,
        "width": 64,
        "gen_channels": [32, 16],
        "critic_channels": [16, 32],
        "depth": 7,
        "enh_width": 32,
    },
    "wgan": {
        "epochs": 2000,
        "batch_size": 128,
        "n_critic": 5,
        "lambda": 10.0,
        "lr": 1e-4,
        "beta1": 0.5,
        "beta2": 0.9,
        "gp_on_fake_only": False,
    },
    "completion": {
        "iterations": 1250,
        "q": 0.1,
        "lr": 1e-2,
        "beta1": 0.9,
        "beta2": 0.999,
        "restarts": 3,
        "squash_critic": True,
    },
    "enhance": {
        "epochs": 200,
        "batch_size": 64,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "pairs": 2000,
        "noise_sigma": 15.0 / 255.0,
        "blur_sigma": 0.0,
    },
    "metrics": {
        "window": "gaussian",       # gaussian | global
    },
}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key!r} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key!r} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key!r} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key!r} must be a string")
        return value
    if isinstance(default, list):
        if (not isinstance(value, list) or len(value) != len(default)
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in value)):
            raise ConfigError(f"{key!r} must be a list of {len(default)} integers")
        return list(value)
    raise ConfigError(f"{key!r} has unsupported type")


def _resolve(defaults: dict, user: dict, prefix: str = "") -> dict:
    cfg = copy.deepcopy(defaults)
    for k, v in user.items():
        full = prefix + k
        if k not in defaults:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{full!r} must be a table of settings")
            cfg[k] = _resolve(defaults[k], v, full + ".")
        else:
            cfg[k] = _coerce(full, v, defaults[k])
    return cfg


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _parse_overrides(pairs) -> dict:
    out: dict = {}
    for item in pairs:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings like center_block
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} conflicts with an earlier value")
        node[parts[-1]] = value
    return out


def parse_config(path, overrides) -> dict:
    """Defaults <- file <- --set overrides, validated against the schema."""
    user: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    _deep_update(user, _parse_overrides(overrides))
    return _resolve(DEFAULTS, user)


# ---------------------------------------------------------------- presets


def _image_shape(cfg) -> tuple:
    s = cfg["data"]["size"]
    return (1, s, s)


def _gen_preset(cfg) -> ArchPreset:
    m = cfg["models"]
    if cfg["data"]["kind"] == "mixture2d":
        return ArchPreset("gen-mlp2d", toy_z_dim=m["toy_z_dim"], width=m["width"])
    return ArchPreset("gen-img", z_dim=m["z_dim"], image_shape=_image_shape(cfg),
                      gen_channels=tuple(m["gen_channels"]))


def _critic_preset(cfg) -> ArchPreset:
    m = cfg["models"]
    if cfg["data"]["kind"] == "mixture2d":
        return ArchPreset("critic-mlp2d", width=m["width"])
    return ArchPreset("critic-img", image_shape=_image_shape(cfg),
                      critic_channels=tuple(m["critic_channels"]))


def _enh_preset(cfg) -> ArchPreset:
    m = cfg["models"]
    return ArchPreset("enhancer", depth=m["depth"], enh_width=m["enh_width"],
                      image_shape=_image_shape(cfg))


def _dirs(out: Path) -> tuple:
    logs, ckpt, images = out / "logs", out / "ckpt", out / "images"
    for d in (logs, ckpt, images):
        d.mkdir(parents=True, exist_ok=True)
    return logs, ckpt, images


def _byte_scale(img):
    return (img + 1.0) * 127.5


# --------------------------------------------------------------- commands


def cmd_gen_data(args, cfg, out: Path):
    logs, _, images = _dirs(out)
    d = cfg["data"]
    master = Rng(cfg["seed"])
    if d["kind"] == "mixture2d":
        pts = gen_mixture2d(d["count"], master.spawn(), d["modes"],
                            d["radius"], d["sigma"])
        lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in pts]
        (logs / "mixture.csv").write_text("\n".join(lines) + "\n")
        return
    faces = gen_faces(d["count"], master.spawn(), d["size"])
    order = master.spawn().permutation(d["count"])
    cut = int(round(d["train_fraction"] * d["count"]))
    labels = ["test"] * d["count"]
    for i in order[:cut]:
        labels[i] = "train"
    write_dataset(images, faces, labels)


def _train_dataset(cfg, rng: Rng):
    d = cfg["data"]
    if d["kind"] == "mixture2d":
        return gen_mixture2d(d["count"], rng, d["modes"], d["radius"], d["sigma"])
    return gen_faces(d["count"], rng, d["size"])


def cmd_train_gan(args, cfg, out: Path):
    logs, ckpt, _ = _dirs(out)
    master = Rng(cfg["seed"])
    data = _train_dataset(cfg, master.spawn())
    gen = init_model(_gen_preset(cfg), master.spawn())
    critic = init_model(_critic_preset(cfg), master.spawn())
    w = cfg["wgan"]
    wcfg = WganConfig(epochs=w["epochs"], batch_size=w["batch_size"],
                      n_critic=w["n_critic"], lam=w["lambda"], lr=w["lr"],
                      beta1=w["beta1"], beta2=w["beta2"],
                      seed=int(master.next_u64()),
                      gp_on_fake_only=w["gp_on_fake_only"])
    _, _, log = train_wgan(gen, critic, data, wcfg)
    log.to_csv(logs / "wgan.csv")
    save_checkpoint(gen, ckpt / "gen.wgck", rng_state=wcfg.seed)
    save_checkpoint(critic, ckpt / "critic.wgck", rng_state=wcfg.seed)


def cmd_train_enhance(args, cfg, out: Path):
    logs, ckpt, _ = _dirs(out)
    e = cfg["enhance"]
    master = Rng(cfg["seed"])
    clean = gen_faces(e["pairs"], master.spawn(), cfg["data"]["size"])
    pairs = make_pairs(clean, e["noise_sigma"], e["blur_sigma"], master.spawn())
    model = init_model(_enh_preset(cfg), master.spawn())
    ecfg = EnhanceConfig(epochs=e["epochs"], batch_size=e["batch_size"],
                         lr=e["lr"], beta1=e["beta1"], beta2=e["beta2"],
                         seed=int(master.next_u64()))
    _, log = train_enhancer(model, pairs, ecfg)
    log.to_csv(logs / "enhance.csv")
    save_checkpoint(model, ckpt / "enhancer.wgck", rng_state=ecfg.seed)


def _completion_cfg(cfg, seed: int) -> CompletionConfig:
    c = cfg["completion"]
    return CompletionConfig(iterations=c["iterations"], q=c["q"], lr=c["lr"],
                            beta1=c["beta1"], beta2=c["beta2"],
                            restarts=c["restarts"],
                            squash_critic=c["squash_critic"], seed=seed)


def _complete_one(cfg, gen, critic, image_path, logs: Path, images: Path):
    d = cfg["data"]
    master = Rng(cfg["seed"])
    y = read_image(image_path)
    m = make_mask(y.shape[-2:], d["mask"], master.spawn(),
                  size=d["mask_size"], fraction=d["mask_fraction"])
    ccfg = _completion_cfg(cfg, int(master.next_u64()))
    z, trace = optimize_latent(y, m, gen, critic, ccfg)
    gz = forward(gen, Tensor(z), batch=False).data
    recon = blend_reconstruct(y, m, gz)

    stem = Path(image_path).stem
    write_image(images / f"{stem}_orig.pgm", y)
    write_image(images / f"{stem}_input.pgm", apply_mask(m, y))
    write_image(images / f"{stem}_output.pgm", recon)
    trace_to_csv(trace, logs / f"{stem}_completion.csv")
    return recon, stem


def cmd_complete(args, cfg, out: Path):
    logs, _, images = _dirs(out)
    gen, _ = load_checkpoint(args.gen)
    critic, _ = load_checkpoint(args.critic)
    _complete_one(cfg, gen, critic, args.image, logs, images)


def cmd_enhance(args, cfg, out: Path):
    _, _, images = _dirs(out)
    model, _ = load_checkpoint(args.model)
    y = read_image(args.image)
    write_image(images / f"{Path(args.image).stem}_enhanced.pgm",
                enhance_image(model, y))


def cmd_pipeline(args, cfg, out: Path):
    logs, _, images = _dirs(out)
    gen, _ = load_checkpoint(args.gen)
    critic, _ = load_checkpoint(args.critic)
    enh, _ = load_checkpoint(args.enhancer)
    recon, stem = _complete_one(cfg, gen, critic, args.image, logs, images)
    write_image(images / f"{stem}_enhanced.pgm", enhance_image(enh, recon))


def cmd_evaluate(args, cfg, out: Path):
    logs, _, _ = _dirs(out)
    ref_dir, test_dir = Path(args.ref), Path(args.test)
    names = sorted(p.name for p in ref_dir.iterdir()
                   if p.suffix in (".pgm", ".ppm"))
    if not names:
        raise FileNotFoundError(f"no images under {ref_dir}")
    report = QualityReport()
    window = cfg["metrics"]["window"]
    for name in names:
        a = _byte_scale(read_image(ref_dir / name))
        b = _byte_scale(read_image(test_dir / name))
        report.add(name, psnr(a, b), ssim(a, b, window=window))
    report.to_csv(logs / "evaluate.csv")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "train-enhance": cmd_train_enhance,
    "complete": cmd_complete,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--seed", type=int, help="override the config seed")
    shared.add_argument("--out", default="out", help="output directory")
    shared.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")

    p = argparse.ArgumentParser(prog="ganfill",
                                description="WGAN-GP image completion pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[shared],
                   help="write a synthetic dataset (faces or 2-d mixture)")
    sub.add_parser("train-gan", parents=[shared],
                   help="train generator + critic, save checkpoints")
    sub.add_parser("train-enhance", parents=[shared],
                   help="train the residual enhancer on degraded pairs")

    c = sub.add_parser("complete", parents=[shared],
                       help="mask an image and fill it by latent search")
    c.add_argument("--gen", required=True, help="generator checkpoint")
    c.add_argument("--critic", required=True, help="critic checkpoint")
    c.add_argument("--image", required=True, help="input .pgm/.ppm image")

    e = sub.add_parser("enhance", parents=[shared],
                       help="run the enhancer over one image")
    e.add_argument("--model", required=True, help="enhancer checkpoint")
    e.add_argument("--image", required=True, help="input .pgm/.ppm image")

    v = sub.add_parser("evaluate", parents=[shared],
                       help="psnr/ssim of matching files in two directories")
    v.add_argument("--ref", required=True, help="reference image directory")
    v.add_argument("--test", required=True, help="directory under test")

    pl = sub.add_parser("pipeline", parents=[shared],
                        help="complete, then enhance the reconstruction")
    pl.add_argument("--gen", required=True)
    pl.add_argument("--critic", required=True)
    pl.add_argument("--enhancer", required=True)
    pl.add_argument("--image", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(cfg, sort_keys=True, indent=2) + "\n")
        COMMANDS[args.command](args, cfg, out)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CodecError, CheckpointError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
