"""Image quality metrics on [0, 1] RGB buffers."""

from __future__ import annotations

import math

import numpy as np

LUMA = np.array([0.2126, 0.7152, 0.0722])


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE); identical images give ``math.inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def grayscale(img):
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def ssim(a, b, *, window: int = 8, stride: int = 4, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over square windows with uniform weights and population statistics.

    Images smaller than the window are treated as a single window.
    """
    a, b = _pair(a, b)
    x, y = grayscale(a), grayscale(b)
    H, W = x.shape
    wh, ww = min(window, H), min(window, W)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(0, H - wh + 1, stride):
        for j in range(0, W - ww + 1, stride):
            p = x[i:i + wh, j:j + ww]
            q = y[i:i + wh, j:j + ww]
            mp, mq = p.mean(), q.mean()
            vp, vq = p.var(), q.var()
            cov = ((p - mp) * (q - mq)).mean()
            vals.append(((2 * mp * mq + c1) * (2 * cov + c2))
                        / ((mp * mp + mq * mq + c1) * (vp + vq + c2)))
    return float(np.mean(vals))
