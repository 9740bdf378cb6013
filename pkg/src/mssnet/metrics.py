"""Evaluation metrics on plain arrays; nothing here touches the graph."""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a, b):
    """10*log10(1/MSE) for images in [0, 1], capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_1d(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable valid-mode correlation with a 1-D window on both axes."""
    out = sliding_window_view(img, g.size, axis=0) @ g
    out = sliding_window_view(out, g.size, axis=1) @ g
    return out


def _ssim_plane(x, y, g, k1, k2):
    c1 = k1 * k1
    c2 = k2 * k2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def ssim(a, b, per_channel=False, k1=0.01, k2=0.03):
    """Mean SSIM over valid window positions, for images in [0, 1].

    Inputs are (H, W) or channel-last (H, W, C); multichannel images
    are reduced to grayscale by the channel mean unless per_channel is
    set, in which case per-channel SSIMs are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ContractViolation(f"ssim: expected 2-D or 3-D image, got {a.ndim}-D")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ContractViolation(
            f"ssim: image {a.shape[0]}x{a.shape[1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
    if a.ndim == 2:
        return _ssim_plane(a, b, g, k1, k2)
    if per_channel:
        vals = [_ssim_plane(a[:, :, c], b[:, :, c], g, k1, k2)
                for c in range(a.shape[2])]
        return float(np.mean(vals))
    return _ssim_plane(a.mean(axis=2), b.mean(axis=2), g, k1, k2)
