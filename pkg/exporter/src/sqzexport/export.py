"""Weight export and the one-shot fixtures pipeline."""

from __future__ import annotations

from pathlib import Path

from .calibrate import activation_metadata, collect_activation_ranges
from .goldens import dump_golden, write_manifest
from .images import DEFAULT_MEANS, preprocess, synthetic_image_set
from .model import layer_arrays
from .tiwf import write_tiwf


def export_weights(model, out_path, means=DEFAULT_MEANS, calib_inputs=None,
                   source: dict | None = None) -> None:
    """Write the model as TIWF: f32 weights + calibration metadata.

    Entry order is the network order; re-exporting the same model with the
    same calibration inputs is byte-identical.
    """
    arrays = layer_arrays(model)
    entries = []
    for name, (w, b) in arrays.items():
        entries.append((f"{name}.weight", w, None))
        entries.append((f"{name}.bias", b, None))
    metadata = {
        "arch": "squeezenet_v1.0",
        "means": [float(m) for m in means],
        "source": source or {},
    }
    if calib_inputs:
        ranges = collect_activation_ranges(model, calib_inputs)
        metadata["activations"] = activation_metadata(ranges)
    write_tiwf(out_path, entries, metadata)


def make_fixtures(model, out_dir, images=None, means=DEFAULT_MEANS,
                  source: dict | None = None) -> Path:
    """model.tiwf + per-image golden files + manifest.json, deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = images if images is not None else synthetic_image_set()
    calib = [preprocess(hwc, means) for _, hwc in images]
    export_weights(model, out_dir / "model.tiwf", means=means, calib_inputs=calib,
                   source=source)
    records = dump_golden(model, images, out_dir, means=means)
    write_manifest(out_dir / "manifest.json", "model.tiwf", means, records,
                   source or {})
    return out_dir / "manifest.json"
