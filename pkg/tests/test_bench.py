import json
import statistics

import jsonschema
import numpy as np
import pytest

from tinyinfer import (
    BenchConfig,
    ArgumentError,
    LayerKind,
    ReportError,
    TimingEntry,
    TimingReport,
    group_timings,
    run_benchmark,
    save_weights,
)
from tinyinfer.bench import main, make_parser
from tinyinfer.synth import random_squeezenet_store, write_synthetic_raw

from importlib.resources import files


@pytest.fixture(scope="module")
def bench_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    weights = d / "model.tiwf"
    save_weights(random_squeezenet_store(seed=3), weights)
    image = d / "input.tiraw"
    write_synthetic_raw(image, seed=3)
    return str(weights), str(image)


def entry(name, kind, ms):
    return TimingEntry(name, kind, ms)


# ---------------------------------------------------------------------------
# group_timings

def test_group_mapping_arithmetic():
    r = TimingReport([
        entry("conv", LayerKind.CONV, 200.0),
        entry("relu", LayerKind.RELU, 30.0),
        entry("pool", LayerKind.MAXPOOL, 50.0),
        entry("softmax", LayerKind.SOFTMAX, 5.0),
    ])
    g = group_timings(r)
    assert g.group1_ms == 230.0
    assert g.group2_ms == 55.0
    assert g.quant_overhead_ms == 0.0
    assert g.total_ms == 285.0


def test_group_single_softmax():
    g = group_timings(TimingReport([entry("softmax", LayerKind.SOFTMAX, 5.0)]))
    assert g.group1_ms == 0.0
    assert g.group2_ms == 5.0


def test_group_quant_and_scale_lines():
    r = TimingReport([
        entry("quantize", LayerKind.QUANTIZE, 1.0),
        entry("requant", LayerKind.REQUANTIZE, 2.0),
        entry("dequant", LayerKind.DEQUANTIZE, 3.0),
        entry("scale", LayerKind.SCALE, 0.5),
        entry("concat", LayerKind.CONCAT, 0.25),
    ])
    g = group_timings(r)
    assert g.quant_overhead_ms == 6.0
    assert g.other_ms == 0.5
    assert g.group1_ms == 0.25  # concat counts with conv/relu


def test_group_unknown_kind_rejected():
    r = TimingReport([entry("fire", LayerKind.FIRE, 1.0)])
    with pytest.raises(ReportError):
        group_timings(r)


def test_group_empty_report_rejected():
    with pytest.raises(ReportError):
        group_timings(TimingReport([]))


def test_group_prefers_measured_total():
    r = TimingReport([entry("conv", LayerKind.CONV, 10.0)], total_ms=10.4)
    assert group_timings(r).total_ms == 10.4


# ---------------------------------------------------------------------------
# run_benchmark

class RampClock:
    """Monotonic fake clock whose step grows every call, so later runs are
    strictly slower: any warmup leakage into the stats becomes visible."""

    def __init__(self):
        self.calls = 0
        self.now = 0

    def __call__(self) -> int:
        self.calls += 1
        self.now += self.calls * 1000  # ns
        return self.now


def test_statistics_exclude_warmup(bench_files):
    weights, image = bench_files
    cfg = BenchConfig(weights=weights, input=image, iterations=4, warmup=2, workers=1)
    report = run_benchmark(cfg, clock=RampClock())
    t = report["timing"]
    assert len(t["iteration_ms"]) == 4
    assert len(t["warmup_ms"]) == 2
    # ramp clock: every timed run is slower than every warmup run
    assert min(t["iteration_ms"]) > max(t["warmup_ms"])
    assert t["mean_ms"] == pytest.approx(statistics.fmean(t["iteration_ms"]))
    assert t["median_ms"] == pytest.approx(statistics.median(t["iteration_ms"]))
    assert t["min_ms"] == pytest.approx(min(t["iteration_ms"]))


def test_report_validates_against_shipped_schema(bench_files):
    weights, image = bench_files
    cfg = BenchConfig(weights=weights, input=image, iterations=2, warmup=1, workers=2)
    report = run_benchmark(cfg)
    schema = json.loads(files("tinyinfer").joinpath("bench_report.schema.json").read_text())
    jsonschema.validate(json.loads(json.dumps(report)), schema)


def test_quantized_report_side_by_side(bench_files):
    weights, image = bench_files
    cfg = BenchConfig(weights=weights, input=image, iterations=1, warmup=0,
                      workers=1, quantized=True)
    report = run_benchmark(cfg)
    assert report["calibration"] == "self"  # synthetic store carries no calibration
    g = report["groups"]
    assert g["quant_overhead_ms"] > 0.0
    fb = report["float_baseline"]
    assert fb["groups"]["quant_overhead_ms"] == 0.0
    for section in (g, fb["groups"]):  # additivity holds in both modes
        parts = (section["group1_ms"] + section["group2_ms"]
                 + section["quant_overhead_ms"] + section["other_ms"])
        assert abs(parts - section["total_ms"]) <= 0.01 * section["total_ms"]
    # conv-group and total are separately comparable across modes
    assert g["group1_ms"] > 0 and fb["groups"]["group1_ms"] > 0
    assert g["total_ms"] > 0 and fb["groups"]["total_ms"] > 0
    kinds = {l["kind"] for l in report["layers"]}
    assert {"Quantize", "Requantize", "Dequantize"} <= kinds
    schema = json.loads(files("tinyinfer").joinpath("bench_report.schema.json").read_text())
    jsonschema.validate(json.loads(json.dumps(report)), schema)


def test_bench_config_validation():
    with pytest.raises(ArgumentError):
        BenchConfig(weights="w", input="i", iterations=0)
    with pytest.raises(ArgumentError):
        BenchConfig(weights="w", input="i", workers=0)
    with pytest.raises(ArgumentError):
        BenchConfig(weights="w", input="i", report_format="yaml")


# ---------------------------------------------------------------------------
# CLI

def test_cli_missing_weights_file_exits_2(tmp_path, bench_files, capsys):
    _, image = bench_files
    rc = main(["--weights", str(tmp_path / "nope.tiwf"), "--input", image])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_cli_corrupt_weights_exits_2(tmp_path, bench_files, capsys):
    _, image = bench_files
    bad = tmp_path / "bad.tiwf"
    bad.write_bytes(b"JUNKJUNKJUNK")
    rc = main(["--weights", str(bad), "--input", image])
    assert rc == 2


def test_cli_bad_config_exits_3(bench_files, capsys):
    weights, image = bench_files
    rc = main(["--weights", weights, "--input", image, "--iters", "0"])
    assert rc == 3


def test_cli_json_report_to_file(tmp_path, bench_files):
    weights, image = bench_files
    out = tmp_path / "report.json"
    rc = main([
        "--weights", weights, "--input", image,
        "--iters", "1", "--warmup", "0", "--workers", "1",
        "--format", "json", "--out", str(out),
    ])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["schema_version"] == 1
    assert len(report["top5"]) == 5
    probs = [x["prob"] for x in report["top5"]]
    assert probs == sorted(probs, reverse=True)


def test_cli_text_report_to_stdout(bench_files, capsys):
    weights, image = bench_files
    rc = main([
        "--weights", weights, "--input", image,
        "--iters", "1", "--warmup", "0", "--workers", "1",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "total ms" in out and "top-5" in out


def test_workers_env_sets_default(monkeypatch):
    monkeypatch.setenv("TINYINFER_WORKERS", "7")
    args = make_parser().parse_args(["--weights", "w", "--input", "i"])
    assert args.workers == 7
    monkeypatch.delenv("TINYINFER_WORKERS")
    args = make_parser().parse_args(["--weights", "w", "--input", "i"])
    assert args.workers == 4
