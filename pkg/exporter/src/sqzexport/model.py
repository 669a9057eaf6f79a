"""Reference model loading and the v1.0 architecture cross-check.

The exporter walks the torchvision SqueezeNet v1.0 module tree, maps each
conv onto the engine's naming scheme (conv1, fireN.squeeze, fireN.expand1,
fireN.expand3, conv10), and validates every weight shape against the
architecture table. A mismatch fails the export, never the engine build.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch
from torch import nn
from torchvision.models import squeezenet1_0
from torchvision.models.squeezenet import Fire

from .tiwf import ExportError

FIRE_NAMES = ["fire2", "fire3", "fire4", "fire5", "fire6", "fire7", "fire8", "fire9"]
FIRE_CONFIGS = [
    (16, 64, 64), (16, 64, 64), (32, 128, 128), (32, 128, 128),
    (48, 192, 192), (48, 192, 192), (64, 256, 256), (64, 256, 256),
]
# pools sit after these fires in v1.0; checked against the module order
POOLS_AFTER = {"fire4", "fire8"}


def v10_weight_shapes() -> "OrderedDict[str, tuple[int, ...]]":
    shapes: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    shapes["conv1"] = (96, 3, 7, 7)
    channels = 96
    for name, (s, e1, e3) in zip(FIRE_NAMES, FIRE_CONFIGS):
        shapes[f"{name}.squeeze"] = (s, channels, 1, 1)
        shapes[f"{name}.expand1"] = (e1, s, 1, 1)
        shapes[f"{name}.expand3"] = (e3, s, 3, 3)
        channels = e1 + e3
    shapes["conv10"] = (1000, channels, 1, 1)
    return shapes


def load_reference(seed: int = 0, checkpoint: str | None = None,
                   pretrained: bool = False) -> nn.Module:
    """The reference SqueezeNet v1.0.

    Priority: explicit checkpoint file, then the public zoo (needs network
    access), then a deterministic seeded initialization.
    """
    torch.set_num_threads(1)  # bit-reproducible forward passes
    if pretrained:
        from torchvision.models import SqueezeNet1_0_Weights

        model = squeezenet1_0(weights=SqueezeNet1_0_Weights.IMAGENET1K_V1)
    else:
        torch.manual_seed(seed)
        model = squeezenet1_0(weights=None)
        if checkpoint:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
    model.eval()
    return model


def _conv_array(conv: nn.Conv2d) -> tuple[np.ndarray, np.ndarray]:
    w = conv.weight.detach().numpy().astype(np.float32)
    if conv.bias is not None:
        b = conv.bias.detach().numpy().astype(np.float32)
    else:
        b = np.zeros(w.shape[0], np.float32)
    return w, b


def layer_arrays(model: nn.Module) -> "OrderedDict[str, tuple[np.ndarray, np.ndarray]]":
    """Map the module tree onto engine layer names; validate against v1.0.

    Any parameterized module the mapping does not recognize is an export
    error listing the stray layer.
    """
    out: "OrderedDict[str, tuple[np.ndarray, np.ndarray]]" = OrderedDict()
    fires = iter(FIRE_NAMES)
    pool_positions: list[str] = []
    last_fire = None
    conv1 = None
    unknown: list[str] = []

    for idx, mod in enumerate(model.features):
        if isinstance(mod, nn.Conv2d):
            if conv1 is not None:
                unknown.append(f"features.{idx} (extra Conv2d)")
                continue
            conv1 = mod
            out["conv1"] = _conv_array(mod)
        elif isinstance(mod, Fire):
            name = next(fires, None)
            if name is None:
                unknown.append(f"features.{idx} (extra Fire)")
                continue
            out[f"{name}.squeeze"] = _conv_array(mod.squeeze)
            out[f"{name}.expand1"] = _conv_array(mod.expand1x1)
            out[f"{name}.expand3"] = _conv_array(mod.expand3x3)
            last_fire = name
        elif isinstance(mod, nn.MaxPool2d):
            if last_fire is not None:
                pool_positions.append(last_fire)
        elif isinstance(mod, (nn.ReLU,)):
            pass
        else:
            unknown.append(f"features.{idx} ({type(mod).__name__})")

    leftover = next(fires, None)
    if leftover is not None:
        raise ExportError(f"source model is missing fire modules from {leftover} on")

    conv10 = None
    for idx, mod in enumerate(model.classifier):
        if isinstance(mod, nn.Conv2d):
            if conv10 is not None:
                unknown.append(f"classifier.{idx} (extra Conv2d)")
                continue
            conv10 = mod
            out["conv10"] = _conv_array(mod)
        elif isinstance(mod, (nn.ReLU, nn.Dropout, nn.AdaptiveAvgPool2d)):
            pass
        else:
            unknown.append(f"classifier.{idx} ({type(mod).__name__})")

    if unknown:
        raise ExportError("unknown layers in source model: " + ", ".join(unknown))
    if set(pool_positions) != POOLS_AFTER:
        raise ExportError(
            f"pool placement {pool_positions} does not match v1.0 {sorted(POOLS_AFTER)}"
        )

    expected = v10_weight_shapes()
    for name, shape in expected.items():
        if name not in out:
            raise ExportError(f"source model is missing layer {name!r}")
        w, b = out[name]
        if tuple(w.shape) != shape:
            raise ExportError(
                f"layer {name!r}: weight shape {tuple(w.shape)} != v1.0 table {shape}"
            )
        if b.shape != (shape[0],):
            raise ExportError(f"layer {name!r}: bias shape {b.shape} != ({shape[0]},)")
    return out
