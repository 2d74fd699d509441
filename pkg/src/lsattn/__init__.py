"""Long-short attention: sliding windows joined with dynamic low-rank projections.

The package provides the attention variants (exact, windowed, projected,
aggregated, causal), reverse-mode gradients over all of them, a byte-level
toy language model, an exact FLOP model, and benchmarking/probing tools
behind the `lsattn` command line.
"""

from .autodiff import backward, finite_diff_check, gradients, zero_grads
from .attention import (
    AttentionWeights,
    NormRatioResult,
    ProjectedKV,
    aggregate_dualln_head,
    aggregate_head,
    aggregate_plain_head,
    dynamic_projection,
    full_attention_head,
    long_range_attention_head,
    multi_head,
    norm_ratio_probe,
    sliding_window_attention_head,
)
from .causal import (
    SegmentProjection,
    causal_aggregate_head,
    causal_full_attention_oracle,
    causal_segment_projection,
)
from .config import LSConfig, charlm_causal_config, desk_causal_config
from .errors import ConfigError, DivergenceError, FullyMaskedRowError, ShapeError
from .params import HeadParams, LnParams, MultiHeadParams, init_head_params, init_multi_head_params
from .spans import AttentionSpan, CausalSpan, causal_window_span, window_span
from .tensor import (
    Rng,
    Tensor,
    concat,
    concat_rows,
    count_flops_runtime,
    init_matrix,
    layer_norm,
    masked_softmax,
    matmul,
    no_grad,
    track_peak_bytes,
)

__version__ = "0.1.0"
