"""Test images: a deterministic synthetic set plus optional file decoding.

The engine side never decodes images; everything is pre-decoded here into
raw 227x227 RGB bytes and the matching preprocessed planar tensor.
"""

from __future__ import annotations

import numpy as np

SIZE = 227
DEFAULT_MEANS = (104.0, 117.0, 123.0)


def _grid():
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    return yy / (SIZE - 1), xx / (SIZE - 1)


def synthetic_image_set() -> list[tuple[str, np.ndarray]]:
    """Ten deterministic (name, HxWx3 uint8) images with varied structure."""
    yy, xx = _grid()
    rng = np.random.default_rng(2718)
    images: list[tuple[str, np.ndarray]] = []

    def push(name, r, g, b):
        img = np.stack([r, g, b], axis=-1)
        images.append((name, np.clip(img, 0, 255).astype(np.uint8)))

    push("solid_gray", *(np.full((SIZE, SIZE), 128.0),) * 3)
    push("gradient_h", 255 * xx, 255 * xx, 255 * xx)
    push("gradient_v", 255 * yy, 128 * yy, 255 * (1 - yy))
    push("diagonal", 255 * (xx + yy) / 2, 255 * xx * yy, 255 * abs(xx - yy))
    checker8 = 255.0 * (((np.arange(SIZE) // 8)[:, None] + (np.arange(SIZE) // 8)[None, :]) % 2)
    push("checker8", checker8, 255 - checker8, np.full_like(checker8, 64.0))
    checker32 = 255.0 * (((np.arange(SIZE) // 32)[:, None] + (np.arange(SIZE) // 32)[None, :]) % 2)
    push("checker32", checker32, checker32, checker32)
    push("rings", 127 + 127 * np.sin(40 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2)),
         127 + 127 * np.cos(30 * ((xx - 0.3) ** 2 + (yy - 0.6) ** 2)),
         np.full((SIZE, SIZE), 90.0))
    blob = 255 * np.exp(-(((xx - 0.4) ** 2 + (yy - 0.45) ** 2) / 0.02))
    blob2 = 200 * np.exp(-(((xx - 0.7) ** 2 + (yy - 0.7) ** 2) / 0.01))
    push("blobs", blob + blob2, blob2, blob)
    push("noise_uniform", *(rng.uniform(0, 255, (3, SIZE, SIZE)).astype(np.float32)))
    stripes = 127 + 127 * np.sin(2 * np.pi * 12 * xx)
    push("stripes", stripes, 127 + 127 * np.sin(2 * np.pi * 5 * yy), stripes[::-1].copy())

    assert len(images) == 10
    return images


def load_image_file(path) -> np.ndarray:
    """Decode and resize an image file to 227x227 RGB bytes."""
    from PIL import Image

    with Image.open(path) as im:
        rgb = im.convert("RGB").resize((SIZE, SIZE), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.uint8)


def preprocess(hwc: np.ndarray, means=DEFAULT_MEANS) -> np.ndarray:
    """Planar (1,3,227,227) f32, per-channel mean subtracted.

    Must stay bit-identical to the engine's TIRAW loading path: the f32
    cast happens before the subtraction, and the mean is an f32.
    """
    out = np.empty((1, 3, SIZE, SIZE), np.float32)
    for c in range(3):
        out[0, c] = hwc[:, :, c].astype(np.float32) - np.float32(means[c])
    return out
