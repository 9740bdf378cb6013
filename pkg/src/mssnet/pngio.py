"""8-bit RGB PNG in and out, mapped to [0, 1] float tensors by /255."""

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractViolation, FormatError


def load_image(path):
    """Read a PNG into a (1, 3, H, W) float32 tensor in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise FormatError(f"cannot read image {path}: {e}") from None
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, got {img.format}")
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)[None]


def save_image(t, path):
    """Write a (1, 3, H, W) or (3, H, W) tensor in [0, 1] as 8-bit PNG.

    Values are clamped to [0, 1] and quantized round-to-nearest, the
    exact inverse of load_image up to the 1/510 quantization bound.
    """
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ContractViolation(
                f"save_image: batch size {arr.shape[0]} != 1")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractViolation(
            f"save_image: expected (3, H, W), got {arr.shape}")
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
