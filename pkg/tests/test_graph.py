import numpy as np
import pytest

from tinyinfer import (
    BuildError,
    DType,
    FireConfig,
    FireWeights,
    Graph,
    LayerKind,
    ShapeError,
    WeightTensor,
    allocation_count,
    build_squeezenet,
    calibrate_activations,
    fire,
    run,
    tensor_new,
    top_k,
    wrap,
)
from tinyinfer.graph import ExecutionPlan
from tinyinfer.reference import fire_concat_copy
from tinyinfer.synth import random_squeezenet_store, synthetic_input

from util_engine import random_tensor

SMALL_HW = (63, 63)  # enough spatial extent to survive all three pools


@pytest.fixture(scope="module")
def store():
    return random_squeezenet_store(seed=7)


@pytest.fixture(scope="module")
def small_input():
    import numpy as np
    from tinyinfer import Shape

    rng = np.random.default_rng(5)
    t = tensor_new(Shape(1, 3, *SMALL_HW), DType.F32)
    t.data[...] = rng.uniform(-120, 130, size=t.data.shape).astype(np.float32)
    return t


def make_fire_weights(rng, in_c, cfg: FireConfig) -> FireWeights:
    def wt(o, c, k):
        w = rng.standard_normal((o, c, k, k)).astype(np.float32)
        b = rng.standard_normal(o).astype(np.float32)
        return WeightTensor(wrap(w, DType.F32), b)

    return FireWeights(
        squeeze=wt(cfg.squeeze, in_c, 1),
        expand1=wt(cfg.expand1, cfg.squeeze, 1),
        expand3=wt(cfg.expand3, cfg.squeeze, 3),
    )


# ---------------------------------------------------------------------------
# fire module

def test_fire_output_shape_preserves_spatial(rng):
    cfg = FireConfig(squeeze=2, expand1=3, expand3=3)
    x = random_tensor(rng, (1, 4, 9, 11))
    out = fire(x, cfg, make_fire_weights(rng, 4, cfg))
    assert out.shape.as_tuple() == (1, 6, 9, 11)


def test_fire_all_zero_weights_gives_zero_output(rng):
    cfg = FireConfig(2, 3, 3)
    x = random_tensor(rng, (1, 4, 5, 5))
    w = make_fire_weights(rng, 4, cfg)
    for part in (w.squeeze, w.expand1, w.expand3):
        part.tensor.data[...] = 0.0
        part.bias[...] = 0.0
    out = fire(x, cfg, w)
    assert not out.data.any()


def test_fire_zero_copy_equals_copy_concat_with_fewer_allocations(rng):
    for _ in range(50):
        cfg = FireConfig(
            squeeze=int(rng.integers(1, 9)),
            expand1=int(rng.integers(1, 13)),
            expand3=int(rng.integers(1, 13)),
        )
        in_c = int(rng.integers(1, 9))
        h = int(rng.integers(2, 11))
        w_ = int(rng.integers(2, 11))
        x = random_tensor(rng, (1, in_c, h, w_))
        weights = make_fire_weights(rng, in_c, cfg)

        before = allocation_count()
        zero_copy = fire(x, cfg, weights)
        zero_copy_allocs = allocation_count() - before

        before = allocation_count()
        copied = fire_concat_copy(x, weights.squeeze, weights.expand1, weights.expand3)
        copy_allocs = allocation_count() - before

        assert np.array_equal(zero_copy.data, copied.data)
        assert zero_copy_allocs < copy_allocs


def test_fire_weight_mismatch_raises(rng):
    cfg = FireConfig(2, 3, 3)
    x = random_tensor(rng, (1, 4, 5, 5))
    w = make_fire_weights(rng, 5, cfg)  # built for 5 input channels
    with pytest.raises(ShapeError):
        fire(x, cfg, w)


# ---------------------------------------------------------------------------
# builder

# computed by hand from the conv/pool extent formulas over the v1.0 table
EXPECTED_SHAPES = {
    "conv1": (1, 96, 111, 111),
    "maxpool1": (1, 96, 55, 55),
    "fire2": (1, 128, 55, 55),
    "fire3": (1, 128, 55, 55),
    "fire4": (1, 256, 55, 55),
    "maxpool_fire4": (1, 256, 27, 27),
    "fire5": (1, 256, 27, 27),
    "fire6": (1, 384, 27, 27),
    "fire7": (1, 384, 27, 27),
    "fire8": (1, 512, 27, 27),
    "maxpool_fire8": (1, 512, 13, 13),
    "fire9": (1, 512, 13, 13),
    "conv10": (1, 1000, 13, 13),
    "global_avgpool": (1, 1000, 1, 1),
    "softmax": (1, 1000, 1, 1),
}


def test_float_build_shape_chain(store):
    g = build_squeezenet(store)
    got = {name: shape.as_tuple() for name, shape in g.layer_shapes}
    for name, want in EXPECTED_SHAPES.items():
        assert got[name] == want, name
    assert g.output_shape.as_tuple() == (1, 1000, 1, 1)


def test_build_missing_weight_names_layer(store):
    broken = random_squeezenet_store(seed=7)
    del broken.entries["fire5.squeeze.weight"]
    with pytest.raises(BuildError, match="fire5"):
        build_squeezenet(broken)


def test_build_mis_shaped_weight_names_layer():
    broken = random_squeezenet_store(seed=7)
    e = broken.entries["fire3.expand3.weight"]
    broken.entries["fire3.expand3.weight"] = type(e)(
        e.name, e.dtype, (64, 16, 5, 5), np.zeros(64 * 16 * 25, np.float32), None
    )
    with pytest.raises(BuildError, match="fire3"):
        build_squeezenet(broken)


def test_duplicate_layer_names_rejected(store):
    g = build_squeezenet(store)
    layers = list(g.layers) + [g.layers[0]]
    with pytest.raises(BuildError):
        Graph(layers, g.weights, g.input_shape)


# ---------------------------------------------------------------------------
# execution

def test_run_probs_sum_to_one(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    probs, report = run(g, small_input, workers=1)
    assert abs(float(probs.data.sum()) - 1.0) <= 1e-5
    assert len(report.entries) == len(g.plan().steps)
    assert all(e.duration_ms >= 0 for e in report.entries)


def test_run_twice_bit_identical(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    p1, _ = run(g, small_input, workers=1)
    first = p1.data.copy()
    p2, _ = run(g, small_input, workers=1)
    assert np.array_equal(first, p2.data)


def test_run_workers_bit_identical(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    outs = []
    for n in (1, 2, 4):
        probs, _ = run(g, small_input, workers=n)
        outs.append(probs.data.copy())
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])


def test_run_performs_zero_allocations(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    run(g, small_input, workers=1)  # plan + buffers materialize here
    before = allocation_count()
    run(g, small_input, workers=1)
    assert allocation_count() == before


def test_separate_plans_agree(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    p1, _ = run(g, small_input, workers=1, plan=ExecutionPlan(g))
    p2, _ = run(g, small_input, workers=1, plan=ExecutionPlan(g))
    assert np.array_equal(p1.data, p2.data)


def test_run_rejects_wrong_input_shape(store):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    bad = tensor_new((1, 3, 10, 10), DType.F32)
    with pytest.raises(ShapeError):
        run(g, bad)


def test_attenuation_identity_equals_graph_without_scale_node(store, small_input):
    g = build_squeezenet(store, attenuation=1.0, input_hw=SMALL_HW)
    no_scale_layers = [l for l in g.layers if l.kind is not LayerKind.SCALE]
    g_no_scale = Graph(no_scale_layers, g.weights, g.input_shape)
    a, _ = run(g, small_input, workers=1)
    a = a.data.copy()
    b, _ = run(g_no_scale, small_input, workers=1)
    assert np.array_equal(a, b.data)


def test_attenuation_preserves_argmax(store, small_input):
    base = build_squeezenet(store, attenuation=1.0, input_hw=SMALL_HW)
    probs, _ = run(base, small_input, workers=1)
    want = top_k(probs, 1)[0][0]
    for att in (0.5, 2.0, 0.125):
        g = build_squeezenet(store, attenuation=att, input_hw=SMALL_HW)
        probs, _ = run(g, small_input, workers=1)
        assert top_k(probs, 1)[0][0] == want


def test_timing_report_has_fire_sub_entries(store, small_input):
    g = build_squeezenet(store, input_hw=SMALL_HW)
    _, report = run(g, small_input, workers=1)
    names = [e.name for e in report.entries]
    assert "fire2.squeeze" in names
    assert "fire2.expand1" in names
    assert "fire2.expand3" in names
    assert "fire2.concat" in names
    kinds = {e.name: e.kind for e in report.entries}
    assert kinds["fire2.concat"] is LayerKind.CONCAT
    assert kinds["fire2.squeeze"] is LayerKind.CONV


# ---------------------------------------------------------------------------
# quantized builds

@pytest.fixture(scope="module")
def calibrated_store(store, small_input):
    s = random_squeezenet_store(seed=7)
    calibrate_activations(s, [small_input], input_hw=SMALL_HW)
    return s


def test_quantized_build_contains_conversion_nodes(calibrated_store):
    g = build_squeezenet(calibrated_store, quantized=True, input_hw=SMALL_HW)
    kinds = [l.kind for l in g.layers]
    assert kinds.count(LayerKind.QUANTIZE) >= 1
    assert kinds.count(LayerKind.DEQUANTIZE) >= 1
    step_kinds = [s.kind for s in g.plan().steps]
    assert step_kinds.count(LayerKind.REQUANTIZE) == 17  # conv1 + 2 per fire

    # a requantize sits between consecutive integer convs along the dataflow
    names = [s.name for s in g.plan().steps]
    i_conv1 = names.index("conv1")
    i_next = names.index("fire2.squeeze")
    between = step_kinds[i_conv1 + 1 : i_next]
    assert LayerKind.REQUANTIZE in between


def test_quantized_end_to_end_mode_has_no_requantize(calibrated_store):
    g = build_squeezenet(
        calibrated_store, quantized=True, requantize_between_layers=False, input_hw=SMALL_HW
    )
    step_kinds = [s.kind for s in g.plan().steps]
    assert step_kinds.count(LayerKind.REQUANTIZE) == 0
    assert step_kinds.count(LayerKind.QUANTIZE) == 1
    assert step_kinds.count(LayerKind.DEQUANTIZE) == 1


def test_quantized_run_probs_sum_to_one(calibrated_store, small_input):
    for requant in (True, False):
        g = build_squeezenet(
            calibrated_store, quantized=True, requantize_between_layers=requant,
            input_hw=SMALL_HW,
        )
        probs, _ = run(g, small_input, workers=1)
        assert abs(float(probs.data.sum()) - 1.0) <= 1e-5


def test_quantized_run_deterministic_across_workers(calibrated_store, small_input):
    g = build_squeezenet(calibrated_store, quantized=True, input_hw=SMALL_HW)
    outs = []
    for n in (1, 2, 4):
        probs, _ = run(g, small_input, workers=n)
        outs.append(probs.data.copy())
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])


def test_quantized_build_requires_calibration(store):
    uncalibrated = random_squeezenet_store(seed=7)
    with pytest.raises(BuildError, match="calibrat"):
        build_squeezenet(uncalibrated, quantized=True, input_hw=SMALL_HW)


def test_calibration_records_all_conv_ranges(calibrated_store):
    acts = calibrated_store.metadata["activations"]
    assert "input" in acts and "conv1" in acts and "conv10" in acts
    for fire_name in ("fire2", "fire5", "fire9"):
        assert f"{fire_name}.squeeze" in acts
        assert f"{fire_name}.expand" in acts
    assert len(acts) == 19  # input + conv1 + conv10 + 8 fires x 2
