"""Independent straight-line reference implementations for the test suite.

Everything here is deliberately naive (nested loops, direct summation)
and shares no code with the package under test.
"""

import math

import numpy as np


def dft2_loops(x):
    """Direct O(n^2) 2-D DFT of a real (N, C, H, W) array, unnormalized."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h, w), dtype=np.complex128)
    for b in range(n):
        for ch in range(c):
            for u in range(h):
                for v in range(w):
                    acc = 0.0 + 0.0j
                    for y in range(h):
                        for xx in range(w):
                            ang = -2.0 * math.pi * (u * y / h + v * xx / w)
                            acc += x[b, ch, y, xx] * complex(math.cos(ang), math.sin(ang))
                    out[b, ch, u, v] = acc
    return out


def conv2d_loops(x, w, pad):
    """Naive stride-1 convolution (cross-correlation), zero padding."""
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out, w_out = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for b in range(n):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[b, ci, i + di, j + dj] * w[o, ci, di, dj]
                    out[b, o, i, j] = acc
    return out


def bilinear_1d(x, out_n, in_n):
    """Half-pixel-center bilinear gather along the last axis, clamped."""
    scale = in_n / out_n
    out = np.zeros(x.shape[:-1] + (out_n,), dtype=x.dtype)
    for o in range(out_n):
        src = (o + 0.5) * scale - 0.5
        i0 = math.floor(src)
        t = src - i0
        a = min(max(i0, 0), in_n - 1)
        b = min(max(i0 + 1, 0), in_n - 1)
        out[..., o] = (1.0 - t) * x[..., a] + t * x[..., b]
    return out


def bilinear_resize_loops(x, ratio):
    """Reference separable bilinear resize of an (N, C, H, W) array."""
    h, w = x.shape[2], x.shape[3]
    oh, ow = int(round(h * ratio)), int(round(w * ratio))
    out = bilinear_1d(x, ow, w)
    out = bilinear_1d(out.swapaxes(-1, -2), oh, h).swapaxes(-1, -2)
    return out


def pixel_unshuffle_loops(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c * r * r, h // r, w // r), dtype=x.dtype)
    for ch in range(c):
        for dy in range(r):
            for dx in range(r):
                for i in range(h // r):
                    for j in range(w // r):
                        out[:, ch * r * r + dy * r + dx, i, j] = \
                            x[:, ch, i * r + dy, j * r + dx]
    return out


def pixel_shuffle_loops(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c // (r * r), h * r, w * r), dtype=x.dtype)
    for ch in range(c // (r * r)):
        for dy in range(r):
            for dx in range(r):
                for i in range(h):
                    for j in range(w):
                        out[:, ch, i * r + dy, j * r + dx] = \
                            x[:, ch * r * r + dy * r + dx, i, j]
    return out


def l1_mean(a, b):
    """Per-element mean absolute difference."""
    return float(np.abs(np.asarray(a, dtype=np.float64)
                        - np.asarray(b, dtype=np.float64)).mean())


def freq_l1_mean(a, b):
    """Per-element mean L1 distance between unnormalized 2-D spectra,
    |d_re| + |d_im| per bin, via numpy's FFT (independent of ours)."""
    fa = np.fft.fft2(np.asarray(a, dtype=np.float64), axes=(-2, -1))
    fb = np.fft.fft2(np.asarray(b, dtype=np.float64), axes=(-2, -1))
    d = fa - fb
    return float((np.abs(d.real) + np.abs(d.imag)).mean())


def psnr_loops(pred, gt):
    mse = float(((np.asarray(pred, np.float64) - np.asarray(gt, np.float64)) ** 2).mean())
    if mse == 0.0:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=11, sigma=1.5):
    half = size // 2
    g = np.array([math.exp(-(i * i) / (2 * sigma * sigma))
                  for i in range(-half, half + 1)], dtype=np.float64)
    w = np.outer(g, g)
    return w / w.sum()


def ssim_loops(pred, gt, k1=0.01, k2=0.03):
    """Naive sliding-window SSIM on a single 2-D grayscale image, valid mode."""
    win = gaussian_window()
    size = win.shape[0]
    c1, c2 = k1 * k1, k2 * k2
    h, w = pred.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            p = pred[i:i + size, j:j + size].astype(np.float64)
            g = gt[i:i + size, j:j + size].astype(np.float64)
            mu_p = (win * p).sum()
            mu_g = (win * g).sum()
            var_p = (win * p * p).sum() - mu_p * mu_p
            var_g = (win * g * g).sum() - mu_g * mu_g
            cov = (win * p * g).sum() - mu_p * mu_g
            num = (2 * mu_p * mu_g + c1) * (2 * cov + c2)
            den = (mu_p * mu_p + mu_g * mu_g + c1) * (var_p + var_g + c2)
            vals.append(num / den)
    return float(np.mean(vals))
