"""Synthetic weights and inputs for benchmarks and tests.

A seeded random SqueezeNet store lets the benchmark CLI and the whole
primary test suite run without any exported real model: same seed, same
weights, same predictions.
"""

from __future__ import annotations

import math

import numpy as np

from .graph import conv_weight_shapes
from .model_io import DEFAULT_MEANS, INPUT_HW, WeightStore, save_raw_input
from .tensor import DType, Shape, Tensor, tensor_new


def random_squeezenet_store(seed: int = 0) -> WeightStore:
    """SqueezeNet v1.0 weight store with He-scaled random weights."""
    rng = np.random.default_rng(seed)
    store = WeightStore(
        metadata={
            "arch": "squeezenet_v1.0",
            "means": list(DEFAULT_MEANS),
            "source": {"kind": "synthetic", "seed": seed},
        }
    )
    for name, (o, c, kh, kw) in conv_weight_shapes().items():
        fan_in = c * kh * kw
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(o, c, kh, kw)).astype(np.float32)
        b = rng.uniform(-0.05, 0.05, size=o).astype(np.float32)
        store.add(f"{name}.weight", w)
        store.add(f"{name}.bias", b)
    return store


def synthetic_rgb_image(seed: int = 0) -> np.ndarray:
    """A deterministic (227, 227, 3) uint8 test pattern: smooth gradients
    plus seeded noise, so activations have structure at every scale."""
    h, w = INPUT_HW
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.stack(
        [
            127 + 90 * np.sin(2 * np.pi * (xx / w + seed * 0.1)),
            127 + 90 * np.cos(2 * np.pi * (yy / h - seed * 0.07)),
            127 + 90 * np.sin(2 * np.pi * ((xx + yy) / (h + w) + seed * 0.13)),
        ],
        axis=-1,
    )
    img += rng.normal(0, 12, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def synthetic_input(seed: int = 0, means=DEFAULT_MEANS) -> Tensor:
    """The preprocessed tensor for synthetic_rgb_image(seed)."""
    hwc = synthetic_rgb_image(seed)
    h, w = INPUT_HW
    t = tensor_new(Shape(1, 3, h, w), DType.F32)
    for c in range(3):
        t.data[0, c] = hwc[:, :, c].astype(np.float32) - np.float32(means[c])
    return t


def write_synthetic_raw(path, seed: int = 0) -> None:
    save_raw_input(path, synthetic_rgb_image(seed))
