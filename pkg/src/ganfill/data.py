"""Synthetic corpora, netpbm image codecs, masks, splits and checkpoints.

Images live in [-1, 1] as float64 [c, h, w] arrays. The byte mapping is
round-half-away-from-zero of 127.5*(x+1), so 0.0 encodes to byte 128 and
the endpoints hit 0 and 255 exactly. Checkpoints are a little-endian
binary table of float32 tensors under a 'WGCK' magic.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .models import ArchPreset, Model, _build
from .rng import Rng

MAGIC = b"WGCK"
VERSION = 1


class CodecError(ValueError):
    """Malformed or unsupported netpbm data."""


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint data."""


# ----------------------------------------------------------- synthetic faces

def _sig(x):
    # clip keeps exp in range; sigmoid saturates long before |x| = 60 anyway
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def gen_faces(n: int, rng: Rng, size: int = 16) -> np.ndarray:
    """n grayscale face-like images [n, 1, size, size] in [-1, 1].

    Each face is an ellipse head over a dark background with two eye dots
    and a mouth bar; every draw varies position, extent and intensity, so
    the family is low-dimensional but never degenerate.
    """
    if n < 1:
        raise ValueError("need n >= 1 faces")
    rr, cc = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    half = size / 2.0
    out = np.empty((n, 1, size, size))
    for i in range(n):
        bg = -0.9 + 0.35 * rng.uniform()
        face = 0.15 + 0.5 * rng.uniform()
        cy = half - 1.0 + rng.uniform()
        cx = half - 1.0 + rng.uniform()
        ry = (0.34 + 0.06 * rng.uniform()) * size
        rx = (0.27 + 0.06 * rng.uniform()) * size
        eye_dy = -(0.11 + 0.05 * rng.uniform()) * size
        eye_dx = (0.12 + 0.05 * rng.uniform()) * size
        eye_level = -0.95 + 0.4 * rng.uniform()
        eye_r = 0.7 + 0.4 * rng.uniform()
        mouth_dy = (0.14 + 0.06 * rng.uniform()) * size
        mouth_w = (0.10 + 0.08 * rng.uniform()) * size
        mouth_level = -0.85 + 0.5 * rng.uniform()

        e = ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2
        head = _sig((1.0 - e) / 0.08)
        img = bg + (face - bg) * head

        for sgn in (-1.0, 1.0):
            d2 = (rr - (cy + eye_dy)) ** 2 + (cc - (cx + sgn * eye_dx)) ** 2
            spot = _sig((eye_r**2 - d2) / 0.3) * head
            img = img + (eye_level - img) * spot

        band = np.exp(-(((rr - (cy + mouth_dy)) / 0.6) ** 2))
        wide = _sig((mouth_w - np.abs(cc - cx)) / 0.4)
        mouth = band * wide * head
        img = img + (mouth_level - img) * mouth

        out[i, 0] = np.clip(img, -1.0, 1.0)
    return out


def gen_mixture2d(n: int, rng: Rng, modes: int = 8, radius: float = 2.0,
                  sigma: float = 0.05) -> np.ndarray:
    """n points [n, 2] from a ring of equally spaced Gaussian modes."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    angles = 2.0 * np.pi * np.arange(modes) / modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    out = np.empty((n, 2))
    for i in range(n):
        k = min(int(rng.uniform() * modes), modes - 1)
        out[i, 0] = centers[k, 0] + sigma * rng.normal()
        out[i, 1] = centers[k, 1] + sigma * rng.normal()
    return out


def mixture_mode_centers(modes: int = 8, radius: float = 2.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


# -------------------------------------------------------------------- masks

def make_mask(shape, kind: str, rng: Rng = None, size: int = 8,
              fraction: float = 0.25) -> np.ndarray:
    """Binary [h, w] mask; 1 keeps a pixel, 0 marks it corrupted."""
    h, w = (int(s) for s in shape)
    m = np.ones((h, w))
    if kind == "center_block":
        if size > min(h, w) or size < 0:
            raise ValueError("block does not fit inside the mask")
        r0, c0 = (h - size) // 2, (w - size) // 2
        m[r0:r0 + size, c0:c0 + size] = 0.0
    elif kind == "random_block":
        if size > min(h, w) or size < 0:
            raise ValueError("block does not fit inside the mask")
        if rng is None:
            raise ValueError("random_block needs an rng")
        r0 = int(rng.uniform() * (h - size + 1))
        c0 = int(rng.uniform() * (w - size + 1))
        m[r0:r0 + size, c0:c0 + size] = 0.0
    elif kind == "random_pixels":
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if rng is None:
            raise ValueError("random_pixels needs an rng")
        k = int(round(fraction * h * w))
        idx = rng.permutation(h * w)[:k]
        m.reshape(-1)[idx] = 0.0
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return m


def split_dataset(items, fraction: float, rng: Rng):
    """Deterministic shuffled split; returns (train, held_out)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(items)
    order = rng.permutation(n)
    cut = int(round(fraction * n))
    if isinstance(items, np.ndarray):
        return items[order[:cut]], items[order[cut:]]
    head = [items[i] for i in order[:cut]]
    tail = [items[i] for i in order[cut:]]
    return head, tail


# -------------------------------------------------------------- netpbm codec

def quantize(img: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to bytes: round(127.5*(x+1)) half away from zero."""
    v = 127.5 * (np.asarray(img, dtype=np.float64) + 1.0)
    return np.clip(np.floor(v + 0.5), 0.0, 255.0).astype(np.uint8)


def dequantize(b: np.ndarray) -> np.ndarray:
    return np.asarray(b, dtype=np.float64) / 127.5 - 1.0


def encode_pgm(img: np.ndarray) -> bytes:
    """Binary P5 bytes from a [h,w] or [1,h,w] image in [-1, 1]."""
    img = np.asarray(img)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise CodecError("pgm holds a single channel")
        img = img[0]
    if img.ndim != 2:
        raise CodecError("pgm needs a [h,w] or [1,h,w] image")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + quantize(img).tobytes()


def encode_ppm(img: np.ndarray) -> bytes:
    """Binary P6 bytes from a [3,h,w] image in [-1, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise CodecError("ppm needs a [3,h,w] image")
    _, h, w = img.shape
    raw = quantize(img).transpose(1, 2, 0)  # interleave rgb
    return b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes()


def _parse_header(buf: io.BytesIO):
    magic = buf.read(2)
    if magic not in (b"P5", b"P6"):
        raise CodecError(f"unsupported netpbm magic {magic!r}")

    def token():
        # skip whitespace and '#' comments, collect one token
        out = b""
        while True:
            ch = buf.read(1)
            if ch == b"":
                raise CodecError("truncated netpbm header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = buf.read(1)
                continue
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise CodecError("malformed netpbm header") from e
    if w < 1 or h < 1:
        raise CodecError("malformed netpbm header")
    if maxval != 255:
        raise CodecError(f"unsupported maxval {maxval}")
    return magic, w, h


def decode_pgm(data: bytes) -> np.ndarray:
    """[1,h,w] image in [-1, 1] from binary P5 bytes."""
    buf = io.BytesIO(data)
    magic, w, h = _parse_header(buf)
    if magic != b"P5":
        raise CodecError("expected a P5 grayscale file")
    raw = buf.read(w * h)
    if len(raw) != w * h:
        raise CodecError("truncated pgm payload")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return dequantize(img)[None]


def decode_ppm(data: bytes) -> np.ndarray:
    """[3,h,w] image in [-1, 1] from binary P6 bytes."""
    buf = io.BytesIO(data)
    magic, w, h = _parse_header(buf)
    if magic != b"P6":
        raise CodecError("expected a P6 color file")
    raw = buf.read(3 * w * h)
    if len(raw) != 3 * w * h:
        raise CodecError("truncated ppm payload")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return dequantize(img)


def write_image(path, img: np.ndarray):
    path = Path(path)
    if path.suffix == ".pgm":
        path.write_bytes(encode_pgm(img))
    elif path.suffix == ".ppm":
        path.write_bytes(encode_ppm(img))
    else:
        raise CodecError(f"unsupported image suffix {path.suffix!r}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".pgm":
        return decode_pgm(data)
    if path.suffix == ".ppm":
        return decode_ppm(data)
    raise CodecError(f"unsupported image suffix {path.suffix!r}")


# ------------------------------------------------------------- dataset dirs

def write_dataset(dirpath, images: np.ndarray, splits=None, prefix: str = "face"):
    """Flat folder of .pgm files plus manifest.csv with file,split rows."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}_{i:05d}.pgm"
        write_image(dirpath / name, img)
        names.append(name)
    with open(dirpath / "manifest.csv", "w") as f:
        f.write("file,split\n")
        for i, name in enumerate(names):
            split = splits[i] if splits is not None else "train"
            f.write(f"{name},{split}\n")
    return names


def read_dataset(dirpath, split=None) -> np.ndarray:
    """Stack of [n,c,h,w] images listed in manifest.csv, optionally one split."""
    dirpath = Path(dirpath)
    manifest = dirpath / "manifest.csv"
    if manifest.exists():
        rows = manifest.read_text().strip().splitlines()[1:]
        pairs = [r.split(",") for r in rows if r]
        names = [name for name, sp in pairs if split is None or sp == split]
    else:
        names = sorted(p.name for p in dirpath.glob("*.pgm"))
    if not names:
        raise FileNotFoundError(f"no images for split {split!r} under {dirpath}")
    return np.stack([read_image(dirpath / n) for n in names])


# -------------------------------------------------------------- checkpoints

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(model: Model, path, rng_state: int = 0):
    """Binary snapshot: preset tag, rng state, all parameters and buffers."""
    entries = [(f"p:{k}", t.data) for k, t in model.params.items()]
    entries += [(f"b:{k}", a) for k, a in model.buffers.items()]
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += _pack_str(model.preset.to_tag())
    blob += struct.pack("<Q", rng_state & (2**64 - 1))
    blob += struct.pack("<I", len(entries))
    for name, arr in entries:
        blob += _pack_str(name)
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError("corrupt checkpoint string") from e


def load_checkpoint(path):
    """Rebuild (model, rng_state) from a checkpoint file."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        preset = ArchPreset.from_tag(r.text())
    except (ValueError, TypeError, KeyError) as e:
        raise CheckpointError("corrupt preset tag") from e
    rng_state = r.u64()
    model = _build(preset)
    model.eval()
    expect = {f"p:{k}": t.data for k, t in model.params.items()}
    expect.update({f"b:{k}": a for k, a in model.buffers.items()})
    count = r.u32()
    if count != len(expect):
        raise CheckpointError(
            f"checkpoint holds {count} tensors, preset needs {len(expect)}"
        )
    for _ in range(count):
        name = r.text()
        ndim = r.u32()
        if ndim > 8:
            raise CheckpointError("implausible tensor rank")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        target = expect.pop(name, None)
        if target is None:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(shape) != target.shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        n = int(np.prod(shape)) if shape else 1
        vals = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64)
        target[...] = vals.reshape(shape)
    if expect:
        raise CheckpointError("checkpoint is missing tensors")
    return model, rng_state
