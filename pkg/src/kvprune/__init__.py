"""KV-cache eviction for multimodal decoders.

The core idea: split each candidate key's attention importance by whether
the attending queries share its modality, rank the two scores separately,
and keep only keys that rank highly under both. A smoothed softmax accounts
for the probability mass the evicted keys used to hold. Baseline policies,
a synthetic decode simulator, trace file I/O, distribution diagnostics and
a CLI round out the toolkit.
"""

from .core import (
    HEAD_MODES,
    TEXT,
    VISUAL,
    KvCacheState,
    ModalityTag,
    PruneConfig,
    as_tags,
    modality_index,
    tag_counts,
    validate_config,
)
from .scoring import (
    attention_logits,
    head_average,
    smoothed_softmax_rows,
    softmax_rows,
    trim_observation,
)
from .decompose import ImportanceScores, ModalityBlocks, block_views, cross_self_importance
from .selection import (
    PruneMask,
    apply_prune,
    budget_to_k,
    cross_self_select,
    intersect_masks,
    mask_modality_counts,
    topk_mask,
)
from .policies import (
    POLICY_LABELS,
    POLICY_NAMES,
    AccumulatedScorePolicy,
    CspPolicy,
    FullCachePolicy,
    GlobalTopKPolicy,
    PolicyDecision,
    PolicyKind,
    accumulated_score_step,
    csp_step,
    full_cache_step,
    global_topk_step,
    make_policy,
)
from .simulator import (
    INTERLEAVE_MODES,
    SWEEP_AXES,
    RunReport,
    SyntheticDecoder,
    SynthSpec,
    budget_for_fraction,
    prefill_tags,
    record_trace,
    run_decode,
    sweep,
)
from .traceio import (
    AttentionTrace,
    BadMagicError,
    SizeMismatchError,
    TraceError,
    TraceStep,
    TruncatedTraceError,
    UnsupportedVersionError,
    read_trace,
    write_trace,
)
from .diagnostics import (
    DensityCurve,
    DivergenceReport,
    LayerReport,
    js_divergence,
    kde,
    layer_report,
    silverman_bandwidth,
)
from .reports import ResultsRow, results_csv, steps_csv, summarize

__version__ = "0.1.0"

__all__ = [
    "AccumulatedScorePolicy",
    "AttentionTrace",
    "BadMagicError",
    "CspPolicy",
    "DensityCurve",
    "DivergenceReport",
    "FullCachePolicy",
    "GlobalTopKPolicy",
    "HEAD_MODES",
    "INTERLEAVE_MODES",
    "ImportanceScores",
    "KvCacheState",
    "LayerReport",
    "ModalityBlocks",
    "ModalityTag",
    "POLICY_LABELS",
    "POLICY_NAMES",
    "PolicyDecision",
    "PolicyKind",
    "PruneConfig",
    "PruneMask",
    "ResultsRow",
    "RunReport",
    "SWEEP_AXES",
    "SizeMismatchError",
    "SynthSpec",
    "SyntheticDecoder",
    "TEXT",
    "TraceError",
    "TraceStep",
    "TruncatedTraceError",
    "UnsupportedVersionError",
    "VISUAL",
    "accumulated_score_step",
    "apply_prune",
    "as_tags",
    "attention_logits",
    "block_views",
    "budget_for_fraction",
    "budget_to_k",
    "cross_self_importance",
    "cross_self_select",
    "csp_step",
    "full_cache_step",
    "global_topk_step",
    "head_average",
    "intersect_masks",
    "js_divergence",
    "kde",
    "layer_report",
    "make_policy",
    "mask_modality_counts",
    "modality_index",
    "prefill_tags",
    "read_trace",
    "record_trace",
    "results_csv",
    "run_decode",
    "silverman_bandwidth",
    "smoothed_softmax_rows",
    "softmax_rows",
    "steps_csv",
    "summarize",
    "sweep",
    "tag_counts",
    "topk_mask",
    "trim_observation",
    "validate_config",
    "write_trace",
]
