"""Image I/O helpers.

Convention throughout the package: images are channels-first float32 torch
tensors in [0, 1]; RGB is (3, H, W), masks are (H, W). On disk everything
is 8-bit PNG.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def load_image(path: str | Path) -> torch.Tensor:
    """Load an RGB PNG as a (3, H, W) float tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def load_mask(path: str | Path) -> torch.Tensor:
    """Load a mask PNG as a binary (H, W) float tensor, thresholded at 0.5.

    Value 1 marks the keep region; 0 marks the to-change garment region.
    """
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return (torch.from_numpy(arr) >= 0.5).float()


def save_image(img: torch.Tensor, path: str | Path) -> None:
    """Save a (3, H, W) or (H, W) float tensor in [0, 1] as 8-bit PNG."""
    arr = to_uint8(img)
    if arr.ndim == 3:
        Image.fromarray(arr, mode="RGB").save(path)
    else:
        Image.fromarray(arr, mode="L").save(path)


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8, channels-last for RGB."""
    t = img.detach().clamp(0.0, 1.0)
    if t.ndim == 3:
        t = t.permute(1, 2, 0)
    arr = (t.numpy() * 255.0).round().astype(np.uint8)
    return arr


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    """Inverse of :func:`to_uint8`: uint8 array to float tensor in [0, 1]."""
    t = torch.from_numpy(arr.astype(np.float32) / 255.0)
    if t.ndim == 3:
        t = t.permute(2, 0, 1).contiguous()
    return t


def image_png_size(path: str | Path) -> tuple[int, int]:
    """Return (H, W) from the PNG header without decoding pixel data."""
    with Image.open(path) as im:
        w, h = im.size
    return h, w


def luma(img: torch.Tensor) -> torch.Tensor:
    """Grayscale conversion of a (3, H, W) image with standard luma weights."""
    r, g, b = LUMA_WEIGHTS
    return r * img[0] + g * img[1] + b * img[2]


def to_grayscale_rgb(img: torch.Tensor) -> torch.Tensor:
    """Replicate the luma channel into RGB (grayscale ablation input)."""
    y = luma(img)
    return torch.stack([y, y, y], dim=0)
