"""Image quality metrics: PSNR and windowed SSIM.

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on a
unit dynamic range, zero-padded filtering, channel-averaged. The zero-padded
("same") convolution is self-adjoint for the symmetric window, which keeps the
analytic loss gradients in :mod:`splatpaint.fit` simple.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["psnr", "ssim", "ssim_map"]

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5


def _gaussian_window(size: int = _WINDOW_SIZE, sigma: float = _WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


_WINDOW = _gaussian_window()


def window_filter(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian window filter with zero padding, any (H, W[, C]) array."""
    out = correlate1d(img, _WINDOW, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def _as_chw(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return img


def ssim_parts(a: np.ndarray, b: np.ndarray):
    """Per-pixel SSIM map and the windowed moments it was built from."""
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mu_a, mu_b = window_filter(a), window_filter(b)
    e_aa, e_bb, e_ab = window_filter(a * a), window_filter(b * b), window_filter(a * b)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, mu_a, mu_b, var_a, var_b, cov, a1, a2, b1, b2


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ssim_parts(a, b)[0]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity in [-1, 1]."""
    return float(ssim_map(a, b).mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; 99.0 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))
