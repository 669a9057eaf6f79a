"""Benchmark and inference driver.

Methodology: warmup runs first (excluded from every statistic), then the
timed iterations; the report carries mean, median and min of the end-to-end
wall time plus a per-layer table aggregated over the timed runs.

Layer timings fold into the two-group breakdown: group 1 is convolution +
ReLU + concat, group 2 is pooling + softmax. Quantize/requantize/dequantize
stages are reported as their own overhead line so a quantized run's conv
gain and conversion cost stay separately visible; in quantized mode the
float build is benchmarked alongside for a side-by-side comparison.

Exit codes: 0 success, 2 file/format problems, 3 shape/config problems.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass, asdict

from .errors import (
    ArgumentError,
    BuildError,
    FormatError,
    ReportError,
    ShapeError,
    SizeError,
)
from .graph import (
    Graph,
    LayerKind,
    TimingEntry,
    TimingReport,
    build_squeezenet,
    calibrate_activations,
    run,
)
from .model_io import load_input, load_weights
from .ops import top_k

SCHEMA_VERSION = 1
WORKERS_ENV = "TINYINFER_WORKERS"

_GROUP1 = {LayerKind.CONV, LayerKind.RELU, LayerKind.CONCAT}
_GROUP2 = {LayerKind.MAXPOOL, LayerKind.GLOBAL_AVGPOOL, LayerKind.SOFTMAX}
_QUANT = {LayerKind.QUANTIZE, LayerKind.REQUANTIZE, LayerKind.DEQUANTIZE}
_OTHER = {LayerKind.SCALE}


@dataclass
class GroupReport:
    """The paper-style breakdown: conv/ReLU/concat vs pooling/softmax, with
    quantization conversions and everything else on their own lines."""

    group1_ms: float
    group2_ms: float
    quant_overhead_ms: float
    other_ms: float
    total_ms: float


@dataclass
class BenchConfig:
    weights: str
    input: str
    iterations: int = 10
    warmup: int = 2
    workers: int = 4
    quantized: bool = False
    attenuation: float = 1.0
    report_format: str = "text"
    out: str | None = None
    requantize_between_layers: bool = True

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ArgumentError(f"iterations {self.iterations} must be >= 1")
        if self.warmup < 0:
            raise ArgumentError(f"warmup {self.warmup} must be >= 0")
        if self.workers < 1:
            raise ArgumentError(f"workers {self.workers} must be >= 1")
        if self.report_format not in ("text", "json"):
            raise ArgumentError(f"format {self.report_format!r} must be text or json")


def group_timings(r: TimingReport) -> GroupReport:
    """Fold a timing report into the two-group breakdown."""
    if not r.entries:
        raise ReportError("cannot group an empty timing report")
    sums = {"g1": 0.0, "g2": 0.0, "q": 0.0, "other": 0.0}
    for e in r.entries:
        if e.kind in _GROUP1:
            sums["g1"] += e.duration_ms
        elif e.kind in _GROUP2:
            sums["g2"] += e.duration_ms
        elif e.kind in _QUANT:
            sums["q"] += e.duration_ms
        elif e.kind in _OTHER:
            sums["other"] += e.duration_ms
        else:
            raise ReportError(f"entry {e.name!r} has ungroupable kind {e.kind}")
    total = r.total_ms if r.total_ms is not None else sum(sums.values())
    return GroupReport(sums["g1"], sums["g2"], sums["q"], sums["other"], total)


def _aggregate(reports: list[TimingReport]) -> TimingReport:
    """Mean per-layer durations over the timed iterations."""
    base = reports[0]
    n = len(reports)
    entries = []
    for i, e in enumerate(base.entries):
        mean = sum(r.entries[i].duration_ms for r in reports) / n
        entries.append(TimingEntry(e.name, e.kind, mean, iterations=n))
    mean_total = sum(r.total_ms for r in reports) / n
    return TimingReport(entries, total_ms=mean_total)


def _bench_graph(
    g: Graph, input, cfg: BenchConfig, clock
) -> tuple[dict, list[tuple[int, float]]]:
    plan = g.plan()
    warmup_ms = []
    for _ in range(cfg.warmup):
        _, rep = run(g, input, cfg.workers, plan=plan, clock=clock)
        warmup_ms.append(rep.total_ms)
    reports: list[TimingReport] = []
    top5: list[tuple[int, float]] | None = None
    for _ in range(cfg.iterations):
        probs, rep = run(g, input, cfg.workers, plan=plan, clock=clock)
        reports.append(rep)
        this_top5 = top_k(probs, min(5, probs.shape.c))
        if top5 is None:
            top5 = this_top5
        elif top5 != this_top5:
            raise ReportError("nondeterministic top-5 across iterations")
    agg = _aggregate(reports)
    groups = group_timings(agg)
    iteration_ms = [r.total_ms for r in reports]
    section = {
        "timing": {
            "mean_ms": statistics.fmean(iteration_ms),
            "median_ms": statistics.median(iteration_ms),
            "min_ms": min(iteration_ms),
            "iteration_ms": iteration_ms,
            "warmup_ms": warmup_ms,
        },
        "layers": [
            {
                "name": e.name,
                "kind": e.kind.value,
                "mean_ms": e.duration_ms,
                "iterations": e.iterations,
            }
            for e in agg.entries
        ],
        "groups": asdict(groups),
        "top5": [{"class_index": i, "prob": p} for i, p in top5],
        "peak_plan_bytes": plan.peak_plan_bytes,
        "weight_bytes": g.weight_bytes(),
    }
    return section, top5


def run_benchmark(cfg: BenchConfig, clock=time.perf_counter_ns) -> dict:
    """Load, build, benchmark; returns the full JSON-able report."""
    store = load_weights(cfg.weights)
    input = load_input(cfg.input, means=store.means())

    calibration = None
    if cfg.quantized:
        if store.activation_params("input") is None:
            calibrate_activations(store, [input], attenuation=cfg.attenuation)
            calibration = "self"
        else:
            calibration = "file"

    g = build_squeezenet(
        store,
        quantized=cfg.quantized,
        attenuation=cfg.attenuation,
        requantize_between_layers=cfg.requantize_between_layers,
    )
    main_section, _ = _bench_graph(g, input, cfg, clock)

    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "weights": str(cfg.weights),
            "input": str(cfg.input),
            "iterations": cfg.iterations,
            "warmup": cfg.warmup,
            "workers": cfg.workers,
            "quantized": cfg.quantized,
            "attenuation": cfg.attenuation,
            "requantize_between_layers": cfg.requantize_between_layers,
        },
        "calibration": calibration,
        **main_section,
    }

    if cfg.quantized:
        # side-by-side float baseline so conv gain and conversion overhead
        # can be read off independently
        g_float = build_squeezenet(store, quantized=False, attenuation=cfg.attenuation)
        float_section, _ = _bench_graph(g_float, input, cfg, clock)
        report["float_baseline"] = float_section
    return report


# ---------------------------------------------------------------------------
# rendering / CLI

def render_text(report: dict) -> str:
    lines = []
    c = report["config"]
    lines.append(
        f"tinyinfer bench: {c['weights']}  input={c['input']}  "
        f"iters={c['iterations']} warmup={c['warmup']} workers={c['workers']} "
        f"quantized={c['quantized']}"
    )
    if report.get("calibration"):
        lines.append(f"calibration: {report['calibration']}")

    def render_section(sec: dict, label: str) -> None:
        t = sec["timing"]
        lines.append(f"-- {label} --")
        lines.append(
            f"total ms: mean {t['mean_ms']:.2f}  median {t['median_ms']:.2f}  "
            f"min {t['min_ms']:.2f}"
        )
        g = sec["groups"]
        lines.append(
            f"groups ms: conv/relu/concat {g['group1_ms']:.2f} | "
            f"pool/softmax {g['group2_ms']:.2f} | "
            f"quant overhead {g['quant_overhead_ms']:.2f} | "
            f"other {g['other_ms']:.2f} | total {g['total_ms']:.2f}"
        )
        lines.append(f"peak plan bytes: {sec['peak_plan_bytes']}  "
                     f"weight bytes: {sec['weight_bytes']}")
        lines.append(f"{'layer':<24}{'kind':<16}{'mean ms':>10}")
        for e in sec["layers"]:
            lines.append(f"{e['name']:<24}{e['kind']:<16}{e['mean_ms']:>10.3f}")
        lines.append("top-5: " + ", ".join(
            f"{x['class_index']}:{x['prob']:.4f}" for x in sec["top5"]))

    render_section(report, "quantized" if c["quantized"] else "float")
    if "float_baseline" in report:
        render_section(report["float_baseline"], "float baseline")
        qg = report["groups"]
        fg = report["float_baseline"]["groups"]
        lines.append(
            f"quantized vs float: conv group {qg['group1_ms']:.2f} vs {fg['group1_ms']:.2f} ms, "
            f"total {qg['total_ms']:.2f} vs {fg['total_ms']:.2f} ms, "
            f"conversion overhead {qg['quant_overhead_ms']:.2f} ms"
        )
    return "\n".join(lines)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tinyinfer-bench",
        description="Benchmark the SqueezeNet engine on one input image.",
    )
    default_workers = int(os.environ.get(WORKERS_ENV, "4"))
    ap.add_argument("--weights", required=True, help="TIWF weight file")
    ap.add_argument("--input", required=True, help="TIRAW or TIF32 input file")
    ap.add_argument("--iters", type=int, default=10, help="timed iterations (default 10)")
    ap.add_argument("--warmup", type=int, default=2, help="untimed warmup runs (default 2)")
    ap.add_argument("--workers", type=int, default=default_workers,
                    help=f"worker threads (default 4, env {WORKERS_ENV})")
    ap.add_argument("--quantized", action="store_true", help="run the 8-bit path")
    ap.add_argument("--no-requantize-between-layers", dest="requant", action="store_false",
                    help="quantized mode: keep activations 8-bit end to end")
    ap.add_argument("--attenuation", type=float, default=1.0,
                    help="scale coefficient after global pooling (default 1.0)")
    ap.add_argument("--format", choices=("text", "json"), default="text")
    ap.add_argument("--out", default=None, help="write the report here instead of stdout")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = BenchConfig(
            weights=args.weights,
            input=args.input,
            iterations=args.iters,
            warmup=args.warmup,
            workers=args.workers,
            quantized=args.quantized,
            attenuation=args.attenuation,
            report_format=args.format,
            out=args.out,
            requantize_between_layers=args.requant,
        )
        report = run_benchmark(cfg)
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ShapeError, SizeError, BuildError, ArgumentError, ReportError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3

    text = json.dumps(report, indent=2) if cfg.report_format == "json" else render_text(report)
    if cfg.out:
        try:
            with open(cfg.out, "w") as f:
                f.write(text + "\n")
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    else:
        print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
