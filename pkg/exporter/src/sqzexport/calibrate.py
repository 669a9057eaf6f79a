"""Activation-range calibration over representative inputs.

Records min/max of every conv's raw (pre-ReLU) output, unions across
images, widens each range to include zero, and converts to the affine
params the weight-file metadata carries. The formula mirrors the engine's
documented one exactly: scale = (hi - lo)/255 with lo <= 0 <= hi,
zero_point = round_half_even(-lo/scale) clamped to [0, 255].
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torchvision.models.squeezenet import Fire

from .model import FIRE_NAMES


def params_from_range(lo: float, hi: float) -> dict:
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    width = hi - lo
    if width == 0.0:
        return {"scale": 1.0, "zero_point": int(np.clip(np.rint(-lo), 0, 255))}
    scale = width / 255.0
    zp = int(np.clip(np.rint(-lo / scale), 0, 255))
    return {"scale": scale, "zero_point": zp}


def _union(ranges: dict, key: str, tensor: torch.Tensor) -> None:
    lo = float(tensor.min())
    hi = float(tensor.max())
    if key in ranges:
        old = ranges[key]
        ranges[key] = (min(old[0], lo), max(old[1], hi))
    else:
        ranges[key] = (lo, hi)


def collect_activation_ranges(model: nn.Module, inputs: list[np.ndarray]) -> dict:
    """Run the model over the inputs, harvesting raw conv output ranges."""
    ranges: dict[str, tuple[float, float]] = {}
    hooks = []

    def tap(key):
        def hook(_mod, _inp, out):
            _union(ranges, key, out.detach())
        return hook

    fires = iter(FIRE_NAMES)
    for mod in model.features:
        if isinstance(mod, nn.Conv2d):
            hooks.append(mod.register_forward_hook(tap("conv1")))
        elif isinstance(mod, Fire):
            name = next(fires)
            hooks.append(mod.squeeze.register_forward_hook(tap(f"{name}.squeeze")))
            hooks.append(mod.expand1x1.register_forward_hook(tap(f"{name}.expand")))
            hooks.append(mod.expand3x3.register_forward_hook(tap(f"{name}.expand")))
    for mod in model.classifier:
        if isinstance(mod, nn.Conv2d):
            hooks.append(mod.register_forward_hook(tap("conv10")))

    try:
        with torch.no_grad():
            for x in inputs:
                t = torch.from_numpy(x)
                _union(ranges, "input", t)
                model(t)
    finally:
        for h in hooks:
            h.remove()
    return ranges


def activation_metadata(ranges: dict) -> dict:
    return {key: params_from_range(lo, hi) for key, (lo, hi) in sorted(ranges.items())}
