"""Paired blurred/sharp data.

A dataset directory holds `blur/` and `sharp/` subdirectories with
identically named PNG files; pairs are pixel-aligned. The toy
generator synthesizes that layout by convolving sharp frames with a
normalized linear motion kernel, standing in for a real blur corpus.
"""

import math
import os

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, FormatError
from .pngio import load_image, save_image


def load_pair_dir(root):
    """Eagerly load every pair as (name, blur, sharp) with (3,H,W) arrays."""
    blur_dir = os.path.join(root, "blur")
    sharp_dir = os.path.join(root, "sharp")
    if not os.path.isdir(blur_dir) or not os.path.isdir(sharp_dir):
        raise FormatError(f"{root}: expected blur/ and sharp/ subdirectories")
    blur_names = sorted(n for n in os.listdir(blur_dir)
                        if n.lower().endswith(".png"))
    sharp_names = sorted(n for n in os.listdir(sharp_dir)
                         if n.lower().endswith(".png"))
    if blur_names != sharp_names:
        only_b = set(blur_names) - set(sharp_names)
        only_s = set(sharp_names) - set(blur_names)
        raise FormatError(
            f"{root}: unpaired files (blur only: {sorted(only_b)}, "
            f"sharp only: {sorted(only_s)})")
    if not blur_names:
        raise FormatError(f"{root}: no image pairs found")
    pairs = []
    for name in blur_names:
        b = load_image(os.path.join(blur_dir, name))[0]
        s = load_image(os.path.join(sharp_dir, name))[0]
        if b.shape != s.shape:
            raise FormatError(
                f"{root}/{name}: blur {b.shape} vs sharp {s.shape}")
        pairs.append((name, b, s))
    return pairs


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def motion_kernel(length, angle_deg):
    """Normalized linear motion kernel of the given length in pixels.

    Points along the segment are splatted bilinearly onto the grid, so
    non-axis-aligned angles produce a proper anti-aliased line. Length
    1 degenerates to the identity kernel.
    """
    if length < 1:
        raise ContractViolation(f"motion kernel length {length} < 1")
    size = int(math.ceil(length))
    if size % 2 == 0:
        size += 1
    k = np.zeros((size, size), dtype=np.float64)
    if length == 1:
        k[size // 2, size // 2] = 1.0
        return k
    theta = math.radians(angle_deg)
    dx, dy = math.cos(theta), math.sin(theta)
    half = (length - 1) / 2.0
    n_samples = max(2, int(round(length * 8)))
    c = (size - 1) / 2.0
    for s in np.linspace(-half, half, n_samples):
        x, y = c + s * dx, c + s * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for di, wy in ((0, 1 - fy), (1, fy)):
            for dj, wx in ((0, 1 - fx), (1, fx)):
                w = wy * wx
                # skip zero-weight taps: endpoints that land exactly on
                # the grid would otherwise index one cell past the edge
                if w > 0:
                    k[y0 + di, x0 + dj] += w
    return k / k.sum()


def blur_with_kernel(img, kernel):
    """Convolve a (3, H, W) image with a 2-D kernel, reflect padding."""
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        out[c] = ndimage.convolve(img[c], kernel, mode="reflect")
    return out


def make_synthetic_sharp(out_dir, count, size=128, seed=0, smooth=False):
    """Write `count` synthetic frames to stand in for photos.

    Each frame mixes low-frequency color gradients with a few random
    rectangles and faint noise, which gives the blur kernel actual
    structure to destroy (flat images blur to themselves). smooth=True
    drops the rectangles and noise and narrows the gradient band to at
    most 1.5 cycles per frame; those gentle frames are the right content
    for tiny overfitting runs. Sharp edges, noise, and fast gradients
    land near the spectral nulls of a motion kernel, where the blur is
    irreversible, so they set a loss floor no small net can pass; the
    gentle band stays clear of the first null and overfits cleanly.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = []
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    band = (0.5, 1.5) if smooth else (0.5, 3.0)
    for i in range(count):
        img = np.empty((3, size, size), dtype=np.float64)
        for c in range(3):
            a = rng.uniform(band[0], band[1], size=2)
            ph = rng.uniform(0.0, 2 * np.pi)
            img[c] = 0.5 + 0.25 * np.sin(2 * np.pi * (a[0] * xx + a[1] * yy) + ph)
        if not smooth:
            for _ in range(rng.integers(4, 9)):
                h0, w0 = rng.integers(0, size - 8, 2)
                h1 = h0 + rng.integers(6, size // 2)
                w1 = w0 + rng.integers(6, size // 2)
                color = rng.uniform(0.1, 0.9, size=3)
                img[:, h0:min(h1, size), w0:min(w1, size)] = color[:, None, None]
            img = img + rng.normal(0, 0.01, img.shape)
        img = np.clip(img, 0, 1)
        name = f"frame_{i:04d}.png"
        save_image(img, os.path.join(out_dir, name))
        names.append(name)
    return names


def make_toy_dataset(sharp_dir, out_dir, length=9, angle=None, count=None,
                     seed=0):
    """Build the pair layout by motion-blurring frames from sharp_dir.

    With angle=None each frame gets its own random direction. count
    defaults to every available frame; asking for more cycles the list
    under distinct output names.
    """
    names = sorted(n for n in os.listdir(sharp_dir)
                   if n.lower().endswith(".png"))
    if not names:
        raise FormatError(f"{sharp_dir}: no PNG files")
    if count is None:
        count = len(names)
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "blur"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "sharp"), exist_ok=True)
    written = []
    for i in range(count):
        src = names[i % len(names)]
        sharp = load_image(os.path.join(sharp_dir, src))[0].astype(np.float64)
        a = rng.uniform(0.0, 180.0) if angle is None else angle
        blur = blur_with_kernel(sharp, motion_kernel(length, a))
        out_name = f"pair_{i:04d}.png"
        save_image(sharp, os.path.join(out_dir, "sharp", out_name))
        save_image(blur, os.path.join(out_dir, "blur", out_name))
        written.append(out_name)
    return written
