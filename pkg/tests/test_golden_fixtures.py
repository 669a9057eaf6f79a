"""End-to-end golden checks against fixtures produced by the export tool.

The whole module skips unless a fixtures directory exists (set
TINYINFER_FIXTURES, or put one at <repo>/fixtures). Fixture layout:

    manifest.json     - see below
    model.tiwf        - exported reference weights (with calibration)
    <name>.tiraw      - raw RGB input
    <name>.tif32      - the exporter's preprocessed tensor (bit-exact)

manifest.json:
    schema_version, weights, means, checksum_algorithm ("sha256"),
    tolerances {top5_prob_abs, activation_rel},
    images: [{name, raw, f32, f32_sha256,
              top5: [{class_index, prob} x5],
              activation_summaries: {step_name: {min, max, mean}}}]
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from tinyinfer import build_squeezenet, load_input, load_weights, run, top_k

_env = os.environ.get("TINYINFER_FIXTURES")
FIXTURES = Path(_env) if _env else Path(__file__).resolve().parent.parent / "fixtures"

pytestmark = pytest.mark.skipif(
    not (FIXTURES / "manifest.json").exists(),
    reason="no golden fixtures present (run the export tool, or set TINYINFER_FIXTURES)",
)


@pytest.fixture(scope="module")
def manifest():
    with open(FIXTURES / "manifest.json") as f:
        m = json.load(f)
    assert m["schema_version"] == 1
    assert m["checksum_algorithm"] == "sha256"
    return m


@pytest.fixture(scope="module")
def store(manifest):
    return load_weights(FIXTURES / manifest["weights"])


@pytest.fixture(scope="module")
def float_graph(store):
    return build_squeezenet(store)


@pytest.fixture(scope="module")
def quantized_graph(store):
    return build_squeezenet(store, quantized=True)


def test_preprocessing_matches_exporter_bit_for_bit(manifest, store):
    means = tuple(manifest["means"])
    assert means == store.means()
    for img in manifest["images"]:
        raw = load_input(FIXTURES / img["raw"], means=means)
        dumped = load_input(FIXTURES / img["f32"])
        assert np.array_equal(raw.data, dumped.data), img["name"]
        digest = hashlib.sha256(
            np.ascontiguousarray(dumped.data, dtype="<f4").tobytes()
        ).hexdigest()
        assert digest == img["f32_sha256"], img["name"]


def test_float_engine_matches_reference_top5(manifest, float_graph):
    tol = manifest["tolerances"]["top5_prob_abs"]
    matches = 0
    for img in manifest["images"]:
        x = load_input(FIXTURES / img["f32"])
        probs, _ = run(float_graph, x, workers=2)
        engine_top1 = top_k(probs, 1)[0][0]
        want = img["top5"]
        assert engine_top1 == want[0]["class_index"], img["name"]
        flat = probs.data[0, :, 0, 0]
        for rec in want:
            assert abs(float(flat[rec["class_index"]]) - rec["prob"]) <= tol, img["name"]
        matches += 1
    assert matches == len(manifest["images"]) == 10


def test_activation_summaries_within_tolerance(manifest, float_graph):
    rel = manifest["tolerances"]["activation_rel"]
    for img in manifest["images"][:3]:  # spot-check: full trace is the exporter's job
        captured = {}
        wanted = img["activation_summaries"]

        def tap(name, out):
            if name in wanted:
                data = out.data.astype(np.float64)
                captured[name] = (data.min(), data.max(), data.mean())

        x = load_input(FIXTURES / img["f32"])
        run(float_graph, x, workers=1, tap=tap)
        for name, want in wanted.items():
            got = captured[name]
            for g, w in zip(got, (want["min"], want["max"], want["mean"])):
                assert abs(g - w) <= rel * max(1.0, abs(w)), (img["name"], name)


def test_quantized_top1_matches_float_on_most_fixtures(manifest, float_graph, quantized_graph):
    agreements = 0
    for img in manifest["images"]:
        x = load_input(FIXTURES / img["f32"])
        float_probs, _ = run(float_graph, x, workers=2)
        quant_probs, _ = run(quantized_graph, x, workers=2)
        if top_k(float_probs, 1)[0][0] == top_k(quant_probs, 1)[0][0]:
            agreements += 1
    assert agreements >= 8, f"quantized top-1 agreed on only {agreements}/10 fixtures"
