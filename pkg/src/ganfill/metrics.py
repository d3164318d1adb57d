"""Image quality measures on the [0, 255] intensity scale.

SSIM combines luminance, contrast and structure terms per window, with
the usual stabilisers C1 = (0.01*255)^2, C2 = (0.03*255)^2, C3 = C2/2.
The default window is an 11x11 Gaussian (sigma 1.5) slid over the image;
images smaller than the window fall back to a single global window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_L = 255.0
C1 = (0.01 * _L) ** 2
C2 = (0.03 * _L) ** 2
C3 = C2 / 2.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty image")
    return a, b


def mse(a, b) -> float:
    """Mean squared error over all pixels and channels."""
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """20*log10(255/sqrt(mse)); identical images give math.inf."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 20.0 * math.log10(_L / math.sqrt(m))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_channel(x, y, alpha, beta, gamma, window, win_size, win_sigma) -> float:
    h, w = x.shape
    if window == "global" or min(h, w) < win_size:
        kern = np.full((h, w), 1.0 / (h * w))
        xs = x[None, None]
        ys = y[None, None]
    else:
        kern = _gaussian_window(win_size, win_sigma)
        xs = sliding_window_view(x, kern.shape)
        ys = sliding_window_view(y, kern.shape)

    mu_x = np.tensordot(xs, kern, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(ys, kern, axes=([2, 3], [0, 1]))
    # weighted central moments; tiny negatives from cancellation are clamped
    var_x = np.maximum(np.tensordot(xs * xs, kern, axes=([2, 3], [0, 1])) - mu_x * mu_x, 0.0)
    var_y = np.maximum(np.tensordot(ys * ys, kern, axes=([2, 3], [0, 1])) - mu_y * mu_y, 0.0)
    cov = np.tensordot(xs * ys, kern, axes=([2, 3], [0, 1])) - mu_x * mu_y
    sd_x = np.sqrt(var_x)
    sd_y = np.sqrt(var_y)

    lum = (2.0 * mu_x * mu_y + C1) / (mu_x * mu_x + mu_y * mu_y + C1)
    con = (2.0 * sd_x * sd_y + C2) / (var_x + var_y + C2)
    struc = (cov + C3) / (sd_x * sd_y + C3)
    val = lum**alpha * con**beta * struc**gamma
    return float(np.mean(val))


def ssim(a, b, alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0,
         window: str = "gaussian", win_size: int = 11, win_sigma: float = 1.5) -> float:
    """Mean structural similarity; accepts [h,w] or [c,h,w] images."""
    a, b = _pair(a, b)
    if window not in ("gaussian", "global"):
        raise ValueError(f"unknown window {window!r}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError("ssim expects [h,w] or [c,h,w] images")
    vals = [
        _ssim_channel(a[c], b[c], alpha, beta, gamma, window, win_size, win_sigma)
        for c in range(a.shape[0])
    ]
    return float(np.mean(vals))


@dataclass
class QualityReport:
    """Per-file psnr/ssim rows plus corpus means."""

    rows: list = field(default_factory=list)  # (name, psnr_db, ssim)

    def add(self, name: str, psnr_db: float, ssim_val: float):
        self.rows.append((name, psnr_db, ssim_val))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("file,psnr_db,ssim\n")
            for name, p, s in self.rows:
                f.write(f"{name},{p!r},{s!r}\n")
            f.write(f"mean,{self.mean_psnr!r},{self.mean_ssim!r}\n")
