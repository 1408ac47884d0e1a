"""Spike-driven inference kernels.

Membrane potentials are quantized to integer spike counts, unfolded into
binary or ternary spike trains, and consumed by sparse-addition matmul
kernels that are exactly equivalent to dense integer products. Rotation
preprocessing disperses quantization cost away from high-gain dimensions,
quantile clipping thins the trains further, and a bit-decomposition cost
model translates firing statistics into FLOPs and energy.
"""

from .clipping import ClipMode, ClipState, calibrate_step, clip_rotated, qsrelu, quantile
from .codec import (
    EncodingConfig,
    EncodingScheme,
    FiringStats,
    LIFParams,
    Polarity,
    SpikeCountMatrix,
    SpikeTrain,
    encode_counts,
    firing_stats,
    fold,
    lif_step,
    unfold,
)
from .costmodel import (
    BitConfig,
    CostReport,
    LayerShape,
    decomposition_factor,
    energy,
    flops_dense,
    flops_spike,
    load_catalog,
    model_report,
)
from .errors import SpikeDriveError
from .kernel import (
    dense_matmul_reference,
    dequantize_accumulator,
    event_count,
    spike_matmul,
    spmv_binary,
    spmv_ternary,
)
from .pipeline import (
    Block,
    BlockConfig,
    FidelityReport,
    Mode,
    Schedule,
    build_block,
    calibrate,
    forward,
    run_async,
    sweep,
)
from .rotation import (
    GammaVector,
    OrthogonalOp,
    OrthoKind,
    dispersion_estimate,
    fuse_rotation_into_weights,
    fwht,
    sample_orthogonal,
    scale_then_rotate,
)
from .tensor import (
    QuantParams,
    Scheme,
    apply_params,
    dequantize,
    int_matrix,
    quant_cost,
    quant_error,
    quantize,
    real_matrix,
)

__version__ = "0.1.0"
