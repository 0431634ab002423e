"""Shared fixtures and helpers for the test suite."""

import numpy as np
from scipy import ndimage

from hairbench import image_io


def make_texture(rng, size=64, blob=True):
    """Smooth skin-like RGB texture in [0,1], quantized to the 8-bit grid."""
    base = rng.uniform(0.45, 0.75, 3)
    noise = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size, 3)), (5, 5, 0))
    noise = noise / (np.abs(noise).max() + 1e-12) * 0.12
    img = base + noise
    if blob:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        r = rng.uniform(0.15, 0.3) * size
        blob_mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        tint = rng.uniform(-0.25, -0.1, 3)
        img = img + blob_mask[:, :, None] * tint
    return image_io.quantize(np.clip(img, 0.0, 1.0))


def write_clean_dir(path, count, size=64, seed=0):
    """Populate a directory with synthetic clean images; returns filenames."""
    rng = np.random.default_rng(seed)
    names = []
    for i in range(count):
        name = f"img{i:03d}.png"
        image_io.save_image(path / name, make_texture(rng, size=size))
        names.append(name)
    return names
