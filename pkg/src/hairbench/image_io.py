"""8-bit PNG image IO with exact quantization round-trips.

Images live on disk as 8-bit RGB PNG and in memory as float arrays in
[0,1] (HWC layout).  Masks are 8-bit grayscale PNG with values {0,255}
and boolean arrays in memory.  Quantization is round(v*255)/255, so a
quantized array survives a save/load cycle bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

__all__ = ["quantize", "load_image", "save_image", "load_mask", "save_mask",
           "to_chw", "from_chw"]


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap float intensities in [0,1] to the 8-bit grid."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def load_image(path) -> np.ndarray:
    """Load an RGB image as float [H,W,3] in [0,1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Save float [H,W,3] in [0,1] as 8-bit RGB PNG."""
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    """Load a binary mask as bool [H,W]; any nonzero pixel counts as set."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except Exception as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return arr > 127


def save_mask(path, mask: np.ndarray) -> None:
    data = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="L").save(path)


def to_chw(img: np.ndarray) -> np.ndarray:
    """[H,W,3] -> [3,H,W]."""
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def from_chw(img: np.ndarray) -> np.ndarray:
    """[3,H,W] -> [H,W,3]."""
    return np.ascontiguousarray(img.transpose(1, 2, 0))
