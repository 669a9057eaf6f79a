"""tinyinfer: a minimal SqueezeNet inference engine built from first
principles: direct convolution kernels, zero-copy fire modules, an 8-bit
quantized path with explicit requantize/dequantize stages, and a grouped
benchmark CLI."""

from .bench import BenchConfig, GroupReport, group_timings, run_benchmark
from .errors import (
    ArgumentError,
    BoundsError,
    BuildError,
    CorruptionError,
    FormatError,
    ReportError,
    ShapeError,
    SizeError,
    TinyInferError,
    VersionError,
)
from .graph import (
    FIRE_TABLE,
    ExecutionPlan,
    FireConfig,
    FireWeights,
    Graph,
    LayerKind,
    LayerSpec,
    TimingEntry,
    TimingReport,
    build_squeezenet,
    calibrate_activations,
    conv_weight_shapes,
    fire,
    run,
)
from .model_io import (
    DEFAULT_MEANS,
    WeightStore,
    load_input,
    load_weights,
    save_f32_input,
    save_raw_input,
    save_weights,
)
from .ops import (
    ConvParams,
    WeightTensor,
    conv2d,
    global_avgpool,
    maxpool2d,
    relu,
    scale,
    softmax,
    top_k,
)
from .quant import (
    QConvBinding,
    QTensor,
    QuantParams,
    choose_quant_params,
    dequantize_tensor,
    params_for_range,
    qconv2d,
    qrelu,
    quantize_tensor,
    requantize_tensor,
)
from .tensor import (
    ChannelSliceView,
    DType,
    Shape,
    Tensor,
    allocation_count,
    slice_channels,
    tensor_new,
    wrap,
)

__version__ = "0.1.0"
