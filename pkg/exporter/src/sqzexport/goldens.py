"""Golden fixture dumping: reference forward passes, top-5, per-layer
activation summaries, and the raw/preprocessed input files.

Summary keys use the engine's timing-step names ("relu1", "maxpool1",
"fire2.relu", ..., "global_avgpool", "softmax") so the engine test suite
can tap its own execution and compare directly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision.models.squeezenet import Fire

from .images import DEFAULT_MEANS, preprocess
from .model import FIRE_NAMES
from .tiwf import ExportError

RAW_MAGIC = b"TIRAW001"
F32_MAGIC = b"TIF32001"

TOP5_PROB_ABS_TOL = 1e-3
ACTIVATION_REL_TOL = 1e-3


def _summary(t: torch.Tensor) -> dict:
    a = t.detach().numpy().astype(np.float64)
    return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}


def reference_forward(model: nn.Module, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Probabilities (1000,) plus activation summaries keyed by engine step."""
    summaries: dict[str, dict] = {}
    hooks = []

    def tap(key):
        def hook(_mod, _inp, out):
            summaries[key] = _summary(out)
        return hook

    fires = iter(FIRE_NAMES)
    seen_relu = False
    seen_pool = False
    for mod in model.features:
        if isinstance(mod, nn.ReLU) and not seen_relu:
            hooks.append(mod.register_forward_hook(tap("relu1")))
            seen_relu = True
        elif isinstance(mod, nn.MaxPool2d) and not seen_pool:
            hooks.append(mod.register_forward_hook(tap("maxpool1")))
            seen_pool = True
        elif isinstance(mod, Fire):
            name = next(fires)
            hooks.append(mod.register_forward_hook(tap(f"{name}.relu")))
    for mod in model.classifier:
        if isinstance(mod, nn.AdaptiveAvgPool2d):
            hooks.append(mod.register_forward_hook(tap("global_avgpool")))

    try:
        with torch.no_grad():
            logits = model(torch.from_numpy(x)).reshape(-1)
            probs = torch.softmax(logits, dim=0).numpy().astype(np.float64)
    finally:
        for h in hooks:
            h.remove()
    summaries["softmax"] = {
        "min": float(probs.min()), "max": float(probs.max()), "mean": float(probs.mean())
    }
    return probs, summaries


def top5(probs: np.ndarray) -> list[dict]:
    order = np.argsort(-probs, kind="stable")[:5]
    return [{"class_index": int(i), "prob": float(probs[i])} for i in order]


def write_raw(path, hwc: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(np.ascontiguousarray(hwc, dtype=np.uint8).tobytes())


def write_f32(path, planar: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(planar, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(F32_MAGIC)
        f.write(payload)
    return payload


def dump_golden(
    model: nn.Module,
    images: list[tuple[str, np.ndarray]],
    out_dir,
    means=DEFAULT_MEANS,
) -> list[dict]:
    """Write per-image TIRAW + TIF32 files and return the manifest records."""
    if not images:
        raise ExportError("no images to dump")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for name, hwc in images:
        planar = preprocess(hwc, means)
        write_raw(out_dir / f"{name}.tiraw", hwc)
        payload = write_f32(out_dir / f"{name}.tif32", planar)
        probs, summaries = reference_forward(model, planar)
        ranked = top5(probs)
        if not all(a["prob"] >= b["prob"] for a, b in zip(ranked, ranked[1:])):
            raise ExportError(f"fixture {name}: top-5 not descending")
        records.append({
            "name": name,
            "raw": f"{name}.tiraw",
            "f32": f"{name}.tif32",
            "f32_sha256": hashlib.sha256(payload).hexdigest(),
            "top5": ranked,
            "activation_summaries": summaries,
        })
    return records


def write_manifest(path, weights_name: str, means, records: list[dict],
                   source: dict) -> None:
    manifest = {
        "schema_version": 1,
        "weights": weights_name,
        "means": [float(m) for m in means],
        "checksum_algorithm": "sha256",
        "tolerances": {
            "top5_prob_abs": TOP5_PROB_ABS_TOL,
            "activation_rel": ACTIVATION_REL_TOL,
        },
        "source": source,
        "images": records,
    }
    with open(path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
