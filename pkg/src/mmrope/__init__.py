"""Position design, frequency allocation and analysis tools for multimodal rotary embeddings."""

from .analysis import (
    AttentionMassReport,
    CoherenceReport,
    DecayCurve,
    attention_mass,
    check_coherence,
    curve_divergence,
    decay_curve,
    decay_indicator,
    partial_sums,
)
from .freqs import (
    Axis,
    ExtrapolationSpec,
    FreqAllocation,
    FreqTable,
    HeadLayout,
    alloc_chunked,
    alloc_ilrope_like,
    alloc_interleaved,
    alloc_multihead,
    alloc_videorope_like,
    apply_ntk,
    apply_yarn,
    base_frequencies,
    recommend_scale,
)
from .positions import (
    DESIGNS,
    DesignOptions,
    IntervalMode,
    PositionLayout,
    PosTriple,
    assign,
    assign_circle,
    assign_diagonal,
    assign_mrope,
    assign_text_spatial_reset,
    assign_v2pe,
    assign_vanilla,
    relative_triple,
)
from .rotary import (
    RotarySpec,
    attention_score,
    multihead_scores,
    rotate,
    rotate_1d,
    score_complex_form,
)
from .stream import (
    Image,
    Modality,
    Role,
    Text,
    TokenStream,
    Video,
    parse_stream,
    serialize_stream,
    token_count,
    token_table,
)

__version__ = "0.1.0"
