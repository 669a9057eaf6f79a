"""Layer graph, fire modules with zero-copy concatenation, and the executor.

A Graph is a declarative, topologically ordered list of LayerSpecs plus a
weight binding. An ExecutionPlan lowers it to primitive steps and
preallocates every activation buffer up front: two ping-pong arenas sized
to the largest intermediate tensor, one dedicated squeeze buffer per fire
module, and a dedicated output tensor. Executing a plan therefore performs
zero tensor allocations, which the allocation tally makes assertable.

A fire module's expand branches write disjoint channel slices of one shared
buffer, so there is no concatenation kernel and no copy; the executor still
emits a ~zero-duration "concat" timing entry so the report's grouping keeps
a line item for it.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import BuildError, ShapeError
from .model_io import INPUT_CHANNELS, INPUT_HW, WeightStore
from .ops import (
    ConvParams,
    WeightTensor,
    conv2d,
    global_avgpool,
    maxpool2d,
    relu,
    scale,
    softmax,
)
from .quant import (
    QConvBinding,
    QTensor,
    QuantParams,
    check_no_accumulator_overflow,
    dequantize_tensor,
    params_for_range,
    qconv2d,
    qrelu,
    quantize_bias,
    quantize_tensor,
    quantize_weights,
    requantize_tensor,
)
from .tensor import DType, Shape, Tensor, TensorLike, slice_channels, tensor_new, wrap


class LayerKind(enum.Enum):
    CONV = "Conv"
    RELU = "ReLU"
    MAXPOOL = "MaxPool"
    FIRE = "Fire"
    GLOBAL_AVGPOOL = "GlobalAvgPool"
    SCALE = "Scale"
    SOFTMAX = "Softmax"
    QUANTIZE = "Quantize"
    DEQUANTIZE = "Dequantize"
    REQUANTIZE = "Requantize"
    CONCAT = "Concat"  # appears in timing reports only (fire branch dispatch)


@dataclass(frozen=True)
class FireConfig:
    """Squeeze/expand filter counts for one fire module."""

    squeeze: int
    expand1: int
    expand3: int

    def __post_init__(self) -> None:
        if min(self.squeeze, self.expand1, self.expand3) < 1:
            raise BuildError(f"fire config {self} needs all counts >= 1")

    @property
    def out_channels(self) -> int:
        return self.expand1 + self.expand3


@dataclass
class FireWeights:
    squeeze: WeightTensor
    expand1: WeightTensor
    expand3: WeightTensor


@dataclass(frozen=True)
class ConvSpec:
    conv: ConvParams
    weight: str  # key into Graph.weights


@dataclass(frozen=True)
class PoolSpec:
    kernel: int
    stride: int
    pad: int = 0


@dataclass(frozen=True)
class ScaleSpec:
    coeff: float


@dataclass(frozen=True)
class QuantizeSpec:
    params: QuantParams


@dataclass(frozen=True)
class RequantizeSpec:
    to_params: QuantParams


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    name: str
    params: Any = None


@dataclass
class TimingEntry:
    name: str
    kind: LayerKind
    duration_ms: float
    iterations: int = 1


@dataclass
class TimingReport:
    entries: list[TimingEntry] = field(default_factory=list)
    total_ms: float | None = None

    def sum_ms(self) -> float:
        return sum(e.duration_ms for e in self.entries)


# ---------------------------------------------------------------------------
# the zero-copy fire module

SQUEEZE_CONV = ConvParams(stride=1, pad=0, kernel_h=1, kernel_w=1)
EXPAND1_CONV = ConvParams(stride=1, pad=0, kernel_h=1, kernel_w=1)
EXPAND3_CONV = ConvParams(stride=1, pad=1, kernel_h=3, kernel_w=3)


def _check_fire_weights(cfg: FireConfig, weights: FireWeights, in_channels: int) -> None:
    checks = (
        ("squeeze", weights.squeeze, (cfg.squeeze, in_channels, 1, 1)),
        ("expand1", weights.expand1, (cfg.expand1, cfg.squeeze, 1, 1)),
        ("expand3", weights.expand3, (cfg.expand3, cfg.squeeze, 3, 3)),
    )
    for label, w, expected in checks:
        if w.tensor.shape.as_tuple() != expected:
            raise ShapeError(
                f"fire {label} weights {w.tensor.shape.as_tuple()} != expected {expected}"
            )


def fire(input: TensorLike, cfg: FireConfig, weights: FireWeights, workers: int = 1) -> Tensor:
    """Run one fire module: squeeze, then both expand branches into disjoint
    channel slices of a single output buffer (no concat copy), ReLU after the
    squeeze and after the expands."""
    _check_fire_weights(cfg, weights, input.shape.c)
    s = input.shape
    squeezed = tensor_new(Shape(s.n, cfg.squeeze, s.h, s.w), DType.F32)
    out = tensor_new(Shape(s.n, cfg.out_channels, s.h, s.w), DType.F32)

    conv2d(input, weights.squeeze, SQUEEZE_CONV, squeezed, workers)
    relu(squeezed, in_place=True)
    conv2d(squeezed, weights.expand1, EXPAND1_CONV, slice_channels(out, 0, cfg.expand1), workers)
    conv2d(
        squeezed, weights.expand3, EXPAND3_CONV,
        slice_channels(out, cfg.expand1, cfg.expand3), workers,
    )
    relu(out, in_place=True)
    return out


# ---------------------------------------------------------------------------
# SqueezeNet v1.0 architecture table

CONV1_FILTERS = 96
CONV1_PARAMS = ConvParams(stride=2, pad=0, kernel_h=7, kernel_w=7)
POOL_PARAMS = PoolSpec(kernel=3, stride=2, pad=0)
NUM_CLASSES = 1000

FIRE_TABLE: tuple[tuple[str, FireConfig], ...] = (
    ("fire2", FireConfig(16, 64, 64)),
    ("fire3", FireConfig(16, 64, 64)),
    ("fire4", FireConfig(32, 128, 128)),
    ("fire5", FireConfig(32, 128, 128)),
    ("fire6", FireConfig(48, 192, 192)),
    ("fire7", FireConfig(48, 192, 192)),
    ("fire8", FireConfig(64, 256, 256)),
    ("fire9", FireConfig(64, 256, 256)),
)
# v1.0 places the mid-network pools after fire4 and fire8 (validated against
# exported reference weight shapes by the export tool).
POOL_AFTER = ("fire4", "fire8")


def conv_weight_shapes(num_classes: int = NUM_CLASSES) -> dict[str, tuple[int, int, int, int]]:
    """Expected (out, in, kh, kw) for every conv in the v1.0 network."""
    shapes = {"conv1": (CONV1_FILTERS, INPUT_CHANNELS, 7, 7)}
    channels = CONV1_FILTERS
    for name, cfg in FIRE_TABLE:
        shapes[f"{name}.squeeze"] = (cfg.squeeze, channels, 1, 1)
        shapes[f"{name}.expand1"] = (cfg.expand1, cfg.squeeze, 1, 1)
        shapes[f"{name}.expand3"] = (cfg.expand3, cfg.squeeze, 3, 3)
        channels = cfg.out_channels
    shapes["conv10"] = (num_classes, channels, 1, 1)
    return shapes


# ---------------------------------------------------------------------------
# graph

class Graph:
    """Immutable-after-build network: ordered layers plus weight bindings.

    ``weights`` maps conv names ("conv1", "fire2.squeeze", ...) to float
    WeightTensors; quantized builds add a QConvBinding per conv in
    ``qconv``. Shapes are chain-checked at construction.
    """

    def __init__(
        self,
        layers: list[LayerSpec],
        weights: dict[str, WeightTensor],
        input_shape: Shape,
        qconv: dict[str, QConvBinding] | None = None,
        quantized: bool = False,
        requant_between: bool = True,
    ):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise BuildError("layer names must be unique within a graph")
        self.layers = list(layers)
        self.weights = dict(weights)
        self.input_shape = input_shape
        self.qconv = dict(qconv or {})
        self.quantized = quantized
        self.requant_between = requant_between
        self.layer_shapes = self._chain_shapes()
        self._default_plan: ExecutionPlan | None = None

    def weight_bytes(self) -> int:
        total = sum(
            w.tensor.data.nbytes + w.bias.nbytes for w in self.weights.values()
        )
        for b in self.qconv.values():
            total += b.weights.data.nbytes + b.bias.nbytes
        return total

    # -- shape chain ---------------------------------------------------

    def _weight(self, layer_name: str, key: str) -> WeightTensor:
        w = self.weights.get(key)
        if w is None:
            raise BuildError(f"layer {layer_name}: missing weights for {key!r}")
        return w

    def _chain_shapes(self) -> list[tuple[str, Shape]]:
        shape = self.input_shape
        out: list[tuple[str, Shape]] = []
        for layer in self.layers:
            k = layer.kind
            if k is LayerKind.CONV:
                spec: ConvSpec = layer.params
                w = self._weight(layer.name, spec.weight)
                if w.in_channels != shape.c:
                    raise BuildError(
                        f"layer {layer.name}: weights {spec.weight!r} expect "
                        f"{w.in_channels} input channels, got {shape.c}"
                    )
                try:
                    shape = spec.conv.out_shape(shape, w.out_channels)
                except ShapeError as e:
                    raise BuildError(f"layer {layer.name}: {e}") from e
            elif k is LayerKind.FIRE:
                cfg: FireConfig = layer.params
                fw = self._fire_weights(layer.name)
                try:
                    _check_fire_weights(cfg, fw, shape.c)
                except ShapeError as e:
                    raise BuildError(f"layer {layer.name}: {e}") from e
                shape = Shape(shape.n, cfg.out_channels, shape.h, shape.w)
            elif k is LayerKind.MAXPOOL:
                p: PoolSpec = layer.params
                oh = (shape.h + 2 * p.pad - p.kernel) // p.stride + 1
                ow = (shape.w + 2 * p.pad - p.kernel) // p.stride + 1
                if oh < 1 or ow < 1:
                    raise BuildError(f"layer {layer.name}: pool leaves no output")
                shape = Shape(shape.n, shape.c, oh, ow)
            elif k is LayerKind.GLOBAL_AVGPOOL:
                shape = Shape(shape.n, shape.c, 1, 1)
            elif k in (
                LayerKind.RELU,
                LayerKind.SCALE,
                LayerKind.SOFTMAX,
                LayerKind.QUANTIZE,
                LayerKind.DEQUANTIZE,
                LayerKind.REQUANTIZE,
            ):
                pass  # shape preserved
            else:
                raise BuildError(f"layer {layer.name}: kind {k} not buildable")
            out.append((layer.name, shape))
        return out

    def _fire_weights(self, name: str) -> FireWeights:
        return FireWeights(
            squeeze=self._weight(name, f"{name}.squeeze"),
            expand1=self._weight(name, f"{name}.expand1"),
            expand3=self._weight(name, f"{name}.expand3"),
        )

    @property
    def output_shape(self) -> Shape:
        return self.layer_shapes[-1][1]

    # -- execution -----------------------------------------------------

    def plan(self) -> "ExecutionPlan":
        if self._default_plan is None:
            self._default_plan = ExecutionPlan(self)
        return self._default_plan

    def run(self, input: TensorLike, workers: int = 4, **kw) -> tuple[Tensor, TimingReport]:
        return run(self, input, workers, **kw)


def run(
    g: Graph,
    input: TensorLike,
    workers: int = 4,
    plan: "ExecutionPlan | None" = None,
    clock: Callable[[], int] = time.perf_counter_ns,
    tap: Callable[[str, TensorLike], None] | None = None,
) -> tuple[Tensor, TimingReport]:
    """Execute the graph, timing every step with the given monotonic clock.

    Returns (probs, report). The probs tensor is owned by the plan and is
    valid until the same plan runs again; copy it to keep it. The clock is
    called exactly twice per timed step plus twice for the whole run.
    """
    if workers < 1:
        raise ShapeError(f"workers {workers} must be >= 1")
    the_plan = plan if plan is not None else g.plan()
    return the_plan.execute(input, workers, clock, tap)


# ---------------------------------------------------------------------------
# builder

def build_squeezenet(
    store: WeightStore,
    quantized: bool = False,
    attenuation: float = 1.0,
    requantize_between_layers: bool = True,
    input_hw: tuple[int, int] = INPUT_HW,
) -> Graph:
    """Assemble SqueezeNet v1.0 from a weight store.

    The training-time dropout has no inference-time kernel; an attenuation
    scale node after the global pooling stands in for it (1.0 = identity,
    matching inverted-dropout inference).

    Quantized builds wrap the integer section in explicit Quantize /
    Requantize / Dequantize nodes. With requantize_between_layers (the
    default) every conv emits codes in its own calibrated range and a
    standalone Requantize converts to the next layer's input range; with it
    off, convs emit directly in the consumer's range and the conversion
    nodes disappear (8-bit end to end).
    """
    input_shape = Shape(1, INPUT_CHANNELS, input_hw[0], input_hw[1])
    weights = _collect_weights(store)

    layers: list[LayerSpec] = []
    qconv: dict[str, QConvBinding] = {}

    act = _ActivationChain(store, quantized, requantize_between_layers)

    if quantized:
        layers.append(
            LayerSpec(LayerKind.QUANTIZE, "quantize_input", QuantizeSpec(act.input_params()))
        )

    def add_conv(name: str, relu_name: str, conv: ConvParams) -> None:
        layers.append(LayerSpec(LayerKind.CONV, name, ConvSpec(conv, name)))
        layers.append(LayerSpec(LayerKind.RELU, relu_name))
        if quantized:
            qconv[name] = act.bind_conv(name, weights[name], conv)
            req = act.requant_after(name)
            if req is not None:
                layers.append(
                    LayerSpec(LayerKind.REQUANTIZE, f"requant_{name}", RequantizeSpec(req))
                )

    add_conv("conv1", "relu1", CONV1_PARAMS)
    layers.append(LayerSpec(LayerKind.MAXPOOL, "maxpool1", POOL_PARAMS))

    for fire_name, cfg in FIRE_TABLE:
        layers.append(LayerSpec(LayerKind.FIRE, fire_name, cfg))
        if quantized:
            for part, conv, key in (
                ("squeeze", SQUEEZE_CONV, f"{fire_name}.squeeze"),
                ("expand1", EXPAND1_CONV, f"{fire_name}.expand1"),
                ("expand3", EXPAND3_CONV, f"{fire_name}.expand3"),
            ):
                qconv[key] = act.bind_fire_conv(fire_name, part, weights[key], conv)
            act.finish_fire(fire_name)
        if fire_name in POOL_AFTER:
            layers.append(LayerSpec(LayerKind.MAXPOOL, f"maxpool_{fire_name}", POOL_PARAMS))

    add_conv("conv10", "relu10", ConvParams(stride=1, pad=0, kernel_h=1, kernel_w=1))
    if quantized:
        # conv10 is the last integer layer: drop its trailing requant, dequantize instead
        if layers[-1].kind is LayerKind.REQUANTIZE:
            layers.pop()
        layers.append(LayerSpec(LayerKind.DEQUANTIZE, "dequantize"))

    layers.append(LayerSpec(LayerKind.GLOBAL_AVGPOOL, "global_avgpool"))
    layers.append(LayerSpec(LayerKind.SCALE, "scale", ScaleSpec(float(attenuation))))
    layers.append(LayerSpec(LayerKind.SOFTMAX, "softmax"))

    return Graph(
        layers, weights, input_shape, qconv=qconv, quantized=quantized,
        requant_between=requantize_between_layers,
    )


def _collect_weights(store: WeightStore) -> dict[str, WeightTensor]:
    expected = conv_weight_shapes()
    weights: dict[str, WeightTensor] = {}
    for name, shape in expected.items():
        try:
            w = store.array(f"{name}.weight")
            b = store.array(f"{name}.bias")
        except KeyError as e:
            raise BuildError(f"weight store is missing entry {e.args[0]!r} for layer {name!r}")
        if w.dtype != np.float32:
            raise BuildError(f"layer {name}: weights must be F32, got {w.dtype}")
        if tuple(w.shape) != shape:
            raise BuildError(f"layer {name}: weight shape {tuple(w.shape)} != expected {shape}")
        if b.shape != (shape[0],):
            raise BuildError(f"layer {name}: bias shape {b.shape} != ({shape[0]},)")
        weights[name] = WeightTensor(wrap(w.reshape(shape), DType.F32), b)
    return weights


class _ActivationChain:
    """Tracks quantization params along the dataflow during a quantized build.

    Raw (pre-ReLU) conv output ranges come from the store's calibration
    metadata; post-ReLU input ranges for the next layer are derived from
    them as [0, range_hi]. In requantize-between-layers mode each conv
    emits at its own raw params and a Requantize converts to the derived
    post-ReLU params; in end-to-end mode the conv emits at the post-ReLU
    params directly and no conversion nodes exist.
    """

    def __init__(self, store: WeightStore, quantized: bool, requant_mode: bool):
        self.store = store
        self.quantized = quantized
        self.requant_mode = requant_mode
        self.flowing: QuantParams | None = None
        self._pending_fire_out: QuantParams | None = None

    def _calibrated(self, key: str) -> QuantParams:
        p = self.store.activation_params(key)
        if p is None:
            raise BuildError(
                f"quantized build needs calibrated activation params for {key!r} "
                "(run calibration or load a calibrated weight file)"
            )
        return p

    def input_params(self) -> QuantParams:
        p = self._calibrated("input")
        self.flowing = p
        return p

    @staticmethod
    def _post_relu(raw: QuantParams) -> QuantParams:
        return params_for_range(0.0, max(raw.range_hi, 0.0))

    def bind_conv(self, name: str, w: WeightTensor, conv: ConvParams) -> QConvBinding:
        raw = self._calibrated(name)
        out_params = raw if self.requant_mode else self._post_relu(raw)
        binding = _make_binding(w, conv, self.flowing, out_params)
        self.flowing = self._post_relu(raw)
        self._last_raw = raw
        return binding

    def requant_after(self, name: str) -> QuantParams | None:
        """Target params for the standalone requant following conv `name`."""
        if not self.requant_mode:
            return None
        return self._post_relu(self._last_raw)

    def bind_fire_conv(
        self, fire_name: str, part: str, w: WeightTensor, conv: ConvParams
    ) -> QConvBinding:
        if part == "squeeze":
            raw = self._calibrated(f"{fire_name}.squeeze")
            out_params = raw if self.requant_mode else self._post_relu(raw)
            binding = _make_binding(w, conv, self.flowing, out_params)
            self._fire_squeeze_pos = self._post_relu(raw)
            return binding
        # both expand branches share the concat buffer and its params
        raw = self._calibrated(f"{fire_name}.expand")
        out_params = raw if self.requant_mode else self._post_relu(raw)
        binding = _make_binding(w, conv, self._fire_squeeze_pos, out_params)
        self._pending_fire_out = self._post_relu(raw)
        return binding

    def finish_fire(self, fire_name: str) -> None:
        self.flowing = self._pending_fire_out


def _make_binding(
    w: WeightTensor, conv: ConvParams, in_params: QuantParams | None, out_params: QuantParams
) -> QConvBinding:
    if in_params is None:
        raise BuildError("quantized conv has no input params; was the input quantized?")
    check_no_accumulator_overflow(w.in_channels, conv.kernel_h, conv.kernel_w)
    codes, w_params = quantize_weights(w.tensor.data)
    q_w = QTensor(wrap(codes, DType.U8), w_params)
    bias_q = quantize_bias(w.bias, in_params.scale, w_params.scale)
    return QConvBinding(weights=q_w, bias=bias_q, in_params=in_params, out_params=out_params)


# ---------------------------------------------------------------------------
# calibration

# step name -> metadata key for raw (pre-ReLU) conv outputs
def _calibration_taps() -> dict[str, str]:
    taps = {"conv1": "conv1", "conv10": "conv10"}
    for fire_name, _ in FIRE_TABLE:
        taps[f"{fire_name}.squeeze"] = f"{fire_name}.squeeze"
        # the concat step exposes the shared expand buffer before its ReLU
        taps[f"{fire_name}.concat"] = f"{fire_name}.expand"
    return taps


def calibrate_activations(
    store: WeightStore,
    inputs: list[TensorLike],
    attenuation: float = 1.0,
    input_hw: tuple[int, int] = INPUT_HW,
) -> None:
    """Record per-layer activation QuantParams into the store's metadata.

    Runs the float network over the calibration inputs, takes element-wise
    min/max unions of each conv's raw output (and of the network input),
    widens every range to include zero, and stores the resulting affine
    params under metadata["activations"].
    """
    if not inputs:
        raise BuildError("calibration needs at least one input")
    g = build_squeezenet(store, quantized=False, attenuation=attenuation, input_hw=input_hw)
    taps = _calibration_taps()
    ranges: dict[str, tuple[float, float]] = {}

    def union(key: str, data: np.ndarray) -> None:
        lo, hi = float(data.min()), float(data.max())
        if key in ranges:
            old_lo, old_hi = ranges[key]
            ranges[key] = (min(old_lo, lo), max(old_hi, hi))
        else:
            ranges[key] = (lo, hi)

    def tap(name: str, out: TensorLike) -> None:
        key = taps.get(name)
        if key is not None:
            union(key, out.data)

    for t in inputs:
        union("input", t.data)
        run(g, t, workers=1, tap=tap)

    for key, (lo, hi) in ranges.items():
        store.set_activation_params(key, params_for_range(lo, hi))


# ---------------------------------------------------------------------------
# execution plan

@dataclass
class _Step:
    name: str
    kind: LayerKind
    run: Callable[[int], None]  # takes the worker count
    out: Callable[[], TensorLike]  # current output, for the tap hook


class ExecutionPlan:
    """All buffers and lowered steps for one graph, allocated up front.

    A plan is not reentrant: concurrent runs need separate plan instances.
    """

    def __init__(self, graph: Graph):
        self.graph = graph
        self._input: TensorLike | None = None
        arena_bytes = self._max_activation_bytes()
        self._arenas = [np.empty(arena_bytes, np.uint8), np.empty(arena_bytes, np.uint8)]
        self._parity = 0
        self._dedicated_bytes = 0
        self.steps: list[_Step] = []
        self._lower()
        self.peak_plan_bytes = 2 * arena_bytes + self._dedicated_bytes

    # -- sizing ---------------------------------------------------------

    def _max_activation_bytes(self) -> int:
        best, in_int = 0, False
        for layer, (_, shape) in zip(self.graph.layers, self.graph.layer_shapes):
            if layer.kind is LayerKind.QUANTIZE:
                in_int = True
            elif layer.kind is LayerKind.DEQUANTIZE:
                in_int = False
            dtype = DType.U8 if in_int else DType.F32
            best = max(best, shape.element_count * dtype.itemsize)
        return best

    def _arena_view(self, shape: Shape, dtype: DType) -> Tensor:
        buf = self._arenas[self._parity]
        self._parity ^= 1
        nbytes = shape.element_count * dtype.itemsize
        return wrap(buf[:nbytes].view(dtype.np_dtype).reshape(shape.as_tuple()), dtype)

    def _dedicated(self, shape: Shape, dtype: DType) -> Tensor:
        t = tensor_new(shape, dtype)
        self._dedicated_bytes += shape.element_count * dtype.itemsize
        return t

    # -- lowering ---------------------------------------------------------

    def _lower(self) -> None:
        g = self.graph
        if not g.layers:
            raise BuildError("cannot plan an empty graph")
        cur: TensorLike | None = None  # None = the input bound at run time
        cur_params: QuantParams | None = None
        last_index = len(g.layers) - 1

        def src():
            captured = cur

            def get() -> TensorLike:
                return self._input if captured is None else captured

            return get

        def dst_for(shape: Shape, dtype: DType, is_last: bool) -> Tensor:
            if is_last:
                return self._dedicated(shape, dtype)
            return self._arena_view(shape, dtype)

        for idx, (layer, (_, out_shape)) in enumerate(zip(g.layers, g.layer_shapes)):
            kind, name = layer.kind, layer.name
            is_last = idx == last_index
            get_in = src()

            if kind is LayerKind.CONV:
                spec: ConvSpec = layer.params
                use_q = g.quantized and spec.weight in g.qconv
                out = dst_for(out_shape, DType.U8 if use_q else DType.F32, is_last)
                if use_q:
                    b = g.qconv[spec.weight]
                    if cur_params != b.in_params:
                        raise BuildError(
                            f"layer {name}: flowing params {cur_params} != binding {b.in_params}"
                        )
                    self._add(name, kind, out, lambda w, gi=get_in, b=b, s=spec, o=out: qconv2d(
                        QTensor(gi(), b.in_params), b.weights, b.bias, s.conv,
                        b.out_params, out=o, workers=w))
                    cur_params = b.out_params
                else:
                    if cur_params is not None:
                        raise BuildError(
                            f"layer {name}: float conv cannot consume quantized activations"
                        )
                    wt = g.weights[spec.weight]
                    self._add(name, kind, out, lambda w, gi=get_in, wt=wt, s=spec, o=out: conv2d(
                        gi(), wt, s.conv, o, workers=w))
                cur = out

            elif kind is LayerKind.FIRE:
                cur, cur_params = self._lower_fire(layer, out_shape, get_in, cur_params, is_last)

            elif kind is LayerKind.RELU:
                cur, cur_params = self._lower_relu(name, get_in, cur, cur_params, out_shape, is_last)

            elif kind is LayerKind.MAXPOOL:
                p: PoolSpec = layer.params
                dtype = DType.U8 if cur_params else DType.F32
                out = dst_for(out_shape, dtype, is_last)
                self._add(name, kind, out, lambda w, gi=get_in, p=p, o=out: maxpool2d(
                    gi(), p.kernel, p.stride, p.pad, out=o, workers=w))
                cur = out

            elif kind is LayerKind.GLOBAL_AVGPOOL:
                out = dst_for(out_shape, DType.F32, is_last)
                self._add(name, kind, out, lambda w, gi=get_in, o=out: global_avgpool(gi(), out=o))
                cur = out

            elif kind is LayerKind.SCALE:
                sp: ScaleSpec = layer.params
                if cur is None:
                    out = dst_for(out_shape, DType.F32, is_last)
                else:
                    out = cur  # elementwise: safe in place
                self._add(name, kind, out, lambda w, gi=get_in, sp=sp, o=out: scale(
                    gi(), sp.coeff, out=o))
                cur = out

            elif kind is LayerKind.SOFTMAX:
                out = dst_for(out_shape, DType.F32, is_last)
                self._add(name, kind, out, lambda w, gi=get_in, o=out: softmax(gi(), out=o))
                cur = out

            elif kind is LayerKind.QUANTIZE:
                qs: QuantizeSpec = layer.params
                out = dst_for(out_shape, DType.U8, is_last)
                self._add(name, kind, out, lambda w, gi=get_in, qs=qs, o=out: quantize_tensor(
                    gi(), qs.params, out=o))
                cur, cur_params = out, qs.params

            elif kind is LayerKind.REQUANTIZE:
                rs: RequantizeSpec = layer.params
                if cur is None or cur_params is None:
                    raise BuildError(f"layer {name}: requantize needs a quantized input")
                out = cur  # elementwise: safe in place
                self._add(name, kind, out, lambda w, gi=get_in, fp=cur_params, rs=rs, o=out:
                          requantize_tensor(QTensor(gi(), fp), rs.to_params, out=o))
                cur_params = rs.to_params

            elif kind is LayerKind.DEQUANTIZE:
                if cur is None or cur_params is None:
                    raise BuildError(f"layer {name}: dequantize needs a quantized input")
                out = dst_for(out_shape, DType.F32, is_last)
                self._add(name, kind, out, lambda w, gi=get_in, fp=cur_params, o=out:
                          dequantize_tensor(QTensor(gi(), fp), out=o))
                cur, cur_params = out, None

            else:
                raise BuildError(f"layer {name}: kind {kind} cannot be lowered")

        self.output = cur

    def _lower_relu(self, name, get_in, cur, cur_params, out_shape, is_last):
        if cur is None:  # never mutate the caller's input tensor
            out = self._arena_view(out_shape, DType.F32) if not is_last \
                else self._dedicated(out_shape, DType.F32)
            self._add(name, LayerKind.RELU, out, lambda w, gi=get_in, o=out:
                      np.maximum(gi().data, 0, out=o.data))
            return out, cur_params
        if cur_params is not None:
            self._add(name, LayerKind.RELU, cur, lambda w, c=cur, p=cur_params:
                      qrelu(QTensor(c, p), in_place=True))
        else:
            self._add(name, LayerKind.RELU, cur, lambda w, c=cur: relu(c, in_place=True))
        return cur, cur_params

    def _lower_fire(self, layer, out_shape, get_in, in_params, is_last):
        g = self.graph
        name = layer.name
        cfg: FireConfig = layer.params
        quantized = g.quantized and f"{name}.squeeze" in g.qconv
        dtype = DType.U8 if quantized else DType.F32
        sq_shape = Shape(out_shape.n, cfg.squeeze, out_shape.h, out_shape.w)
        sq = self._dedicated(sq_shape, dtype)
        out = self._dedicated(out_shape, dtype) if is_last else self._arena_view(out_shape, dtype)
        lo = slice_channels(out, 0, cfg.expand1)
        hi = slice_channels(out, cfg.expand1, cfg.expand3)

        if not quantized:
            w = g._fire_weights(name)
            self._add(f"{name}.squeeze", LayerKind.CONV, sq,
                      lambda k, gi=get_in: conv2d(gi(), w.squeeze, SQUEEZE_CONV, sq, workers=k))
            self._add(f"{name}.squeeze_relu", LayerKind.RELU, sq,
                      lambda k: relu(sq, in_place=True))
            self._add(f"{name}.expand1", LayerKind.CONV, lo,
                      lambda k: conv2d(sq, w.expand1, EXPAND1_CONV, lo, workers=k))
            self._add(f"{name}.expand3", LayerKind.CONV, hi,
                      lambda k: conv2d(sq, w.expand3, EXPAND3_CONV, hi, workers=k))
            self._add(f"{name}.concat", LayerKind.CONCAT, out, lambda k: None)
            self._add(f"{name}.relu", LayerKind.RELU, out, lambda k: relu(out, in_place=True))
            return out, None

        b_sq = g.qconv[f"{name}.squeeze"]
        b_e1 = g.qconv[f"{name}.expand1"]
        b_e3 = g.qconv[f"{name}.expand3"]
        if in_params != b_sq.in_params:
            raise BuildError(
                f"layer {name}: flowing params {in_params} != squeeze binding {b_sq.in_params}"
            )
        requant_mode = g.requant_between

        self._add(f"{name}.squeeze", LayerKind.CONV, sq,
                  lambda k, gi=get_in: qconv2d(QTensor(gi(), b_sq.in_params), b_sq.weights,
                                               b_sq.bias, SQUEEZE_CONV, b_sq.out_params,
                                               out=sq, workers=k))
        self._add(f"{name}.squeeze_relu", LayerKind.RELU, sq,
                  lambda k: qrelu(QTensor(sq, b_sq.out_params), in_place=True))
        if requant_mode:
            self._add(f"{name}.requant_squeeze", LayerKind.REQUANTIZE, sq,
                      lambda k: requantize_tensor(QTensor(sq, b_sq.out_params),
                                                  b_e1.in_params, out=sq))
        self._add(f"{name}.expand1", LayerKind.CONV, lo,
                  lambda k: qconv2d(QTensor(sq, b_e1.in_params), b_e1.weights, b_e1.bias,
                                    EXPAND1_CONV, b_e1.out_params, out=lo, workers=k))
        self._add(f"{name}.expand3", LayerKind.CONV, hi,
                  lambda k: qconv2d(QTensor(sq, b_e3.in_params), b_e3.weights, b_e3.bias,
                                    EXPAND3_CONV, b_e3.out_params, out=hi, workers=k))
        self._add(f"{name}.concat", LayerKind.CONCAT, out, lambda k: None)
        self._add(f"{name}.relu", LayerKind.RELU, out,
                  lambda k: qrelu(QTensor(out, b_e1.out_params), in_place=True))
        out_params = b_e1.out_params
        if requant_mode:
            target = params_for_range(0.0, max(out_params.range_hi, 0.0))
            self._add(f"{name}.requant_out", LayerKind.REQUANTIZE, out,
                      lambda k, t=target, fp=out_params: requantize_tensor(
                          QTensor(out, fp), t, out=out))
            out_params = target
        return out, out_params

    def _add(self, name: str, kind: LayerKind, out: TensorLike, run) -> None:
        self.steps.append(_Step(name, kind, run, lambda o=out: o))

    # -- execution ---------------------------------------------------------

    def execute(
        self,
        input: TensorLike,
        workers: int,
        clock: Callable[[], int] = time.perf_counter_ns,
        tap: Callable[[str, TensorLike], None] | None = None,
    ) -> tuple[Tensor, TimingReport]:
        g = self.graph
        if input.shape.as_tuple() != g.input_shape.as_tuple():
            raise ShapeError(
                f"input shape {input.shape.as_tuple()} != graph input "
                f"{g.input_shape.as_tuple()}"
            )
        if input.dtype is not DType.F32:
            raise ShapeError("graph input must be F32")
        self._input = input
        entries: list[TimingEntry] = []
        run_t0 = clock()
        for step in self.steps:
            t0 = clock()
            step.run(workers)
            t1 = clock()
            entries.append(TimingEntry(step.name, step.kind, (t1 - t0) / 1e6))
            if tap is not None:
                tap(step.name, step.out())
        run_t1 = clock()
        self._input = None
        return self.output, TimingReport(entries, total_ms=(run_t1 - run_t0) / 1e6)
