"""Eviction policies.

Four interchangeable strategies decide which cached tokens survive a prune:

* ``csp``          intersected per-modality top-k (the method under study)
* ``global-topk``  column-sum top-k with optional max-pooling (SnapKV-like)
* ``accum``        accumulated column sums across steps (H2O-like)
* ``full``         never evicts (reference)

The baselines are deliberately simplified single-knob reimplementations;
they exist so modality retention can be compared under one harness, and the
CLI labels them "-like" to avoid overclaiming fidelity to the originals.

Every step function takes the current cache, a (heads, rows, cols) stack of
raw attention logits whose rows are the newest queries and whose columns are
the cached keys, the query rows' modality tags, and a PruneConfig. Policies
return a fresh cache and a PolicyDecision; they never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import KvCacheState, PruneConfig, as_tags, tag_counts, validate_config
from .decompose import cross_self_importance
from .scoring import head_average, smoothed_softmax_rows, trim_observation
from .selection import (
    PruneMask,
    apply_prune,
    budget_to_k,
    cross_self_select,
    mask_modality_counts,
    topk_mask,
)


class PolicyKind(Enum):
    CSP = "csp"
    GLOBAL_TOPK = "global-topk"
    ACCUMULATED_SCORE = "accum"
    FULL_CACHE = "full"


@dataclass(frozen=True)
class PolicyDecision:
    """What one policy step retained.

    retained_mask indexes the candidate universe (cache minus the recent
    window); per_modality_retained counts text/visual tokens inside that
    mask; ks_used records the nominal budget split before any widening;
    pruned is False for early-return no-ops.
    """

    retained_mask: PruneMask
    achieved_occupancy: int
    per_modality_retained: tuple[int, int]
    ks_used: tuple[int, int]
    pruned: bool = True


def _per_head_weights(cache: KvCacheState, logits, query_tags, smoothing: float):
    """Validate shapes and turn raw logits into per-head weight stacks."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ValueError(f"logits must be (heads, rows, cols), got shape {logits.shape}")
    heads, rows, cols = logits.shape
    if cols != cache.length:
        raise ValueError(
            f"logits cover {cols} keys but the cache holds {cache.length}"
        )
    query_tags = as_tags(query_tags)
    if query_tags.shape[0] != rows:
        raise ValueError(f"{query_tags.shape[0]} query tags for {rows} logit rows")
    flat = smoothed_softmax_rows(logits.reshape(heads * rows, cols), smoothing)
    return flat.reshape(heads, rows, cols), query_tags


def _noop_decision(cache: KvCacheState, cfg: PruneConfig) -> PolicyDecision:
    universe = max(cache.length - cfg.recent, 0)
    mask = PruneMask.full(universe)
    return PolicyDecision(
        retained_mask=mask,
        achieved_occupancy=cache.length,
        per_modality_retained=tag_counts(cache.tags[:universe]),
        ks_used=(0, 0),
        pruned=False,
    )


def _decision(cache, cfg, mask, key_tags, ks) -> PolicyDecision:
    return PolicyDecision(
        retained_mask=mask,
        achieved_occupancy=len(mask) + cfg.recent,
        per_modality_retained=mask_modality_counts(mask, key_tags),
        ks_used=ks,
        pruned=True,
    )


def csp_step(cache: KvCacheState, logits, query_tags, cfg: PruneConfig):
    """One cross-self pruning step.

    Below budget this is the identity. Otherwise: smoothed softmax over the
    raw logits, head averaging (or per-head voting), observation trimming,
    modality decomposition, intersected top-k selection, then pruning with
    the recent window attached.
    """
    validate_config(cfg)
    if cache.length < cfg.budget:
        return cache, _noop_decision(cache, cfg)
    weights, query_tags = _per_head_weights(cache, logits, query_tags, cfg.smoothing)
    cand = cache.length - cfg.recent
    key_tags = cache.tags[:cand]

    if cfg.head_mode == "averaged":
        trimmed = trim_observation(head_average(weights), cfg.obs_window, cfg.recent)
        imp = cross_self_importance(trimmed, query_tags[-trimmed.shape[0] :], key_tags)
        mask = cross_self_select(imp, cfg)
    else:
        # Per-head mode: each head votes with its own intersected mask; the
        # most-voted candidates fill the pool, ties to the smaller index.
        votes = np.zeros(cand)
        for head_weights in weights:
            trimmed = trim_observation(head_weights, cfg.obs_window, cfg.recent)
            imp = cross_self_importance(trimmed, query_tags[-trimmed.shape[0] :], key_tags)
            votes += cross_self_select(imp, cfg).as_bool()
        target = min(max(cfg.budget - cfg.recent, 0), cand)
        order = np.argsort(-votes, kind="stable")
        chosen = order[:target]
        mask = PruneMask(chosen[votes[chosen] > 0], cand)

    new_cache = apply_prune(cache, mask, cfg.recent)
    return new_cache, _decision(cache, cfg, mask, key_tags, budget_to_k(cfg, cand))


def _pooled(importance: np.ndarray, width: int) -> np.ndarray:
    """Sliding 1-D max-pool, 'same' length; width 1 is the identity."""
    if width < 1:
        raise ValueError(f"pool width must be >= 1, got {width}")
    if width == 1 or importance.size == 0:
        return importance
    pad_left = (width - 1) // 2
    pad_right = width // 2
    padded = np.pad(importance, (pad_left, pad_right), constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return windows.max(axis=1)


def global_topk_step(
    cache: KvCacheState,
    logits,
    query_tags,
    cfg: PruneConfig,
    pool_width: int = 1,
    smoothing: float = 0.0,
):
    """Single global ranking by column sum, no modality split."""
    validate_config(cfg)
    if cache.length < cfg.budget:
        return cache, _noop_decision(cache, cfg)
    weights, query_tags = _per_head_weights(cache, logits, query_tags, smoothing)
    trimmed = trim_observation(head_average(weights), cfg.obs_window, cfg.recent)
    importance = _pooled(trimmed.sum(axis=0), pool_width)
    cand = cache.length - cfg.recent
    pool = max(cfg.budget - cfg.recent, 0)
    mask = topk_mask(importance, pool)
    new_cache = apply_prune(cache, mask, cfg.recent)
    return new_cache, _decision(cache, cfg, mask, cache.tags[:cand], (pool, pool))


def accumulated_score_step(
    cache: KvCacheState,
    logits,
    query_tags,
    cfg: PruneConfig,
    running: np.ndarray,
    smoothing: float = 0.0,
):
    """Heavy-hitter step: rank by attention mass accumulated across steps.

    `running` holds one accumulator per cached token (new tokens enter at
    zero). Every call adds the current step's column sums over the whole
    cache; eviction keeps the top pool accumulators among the candidates,
    and evicted accumulators are dropped with their tokens.
    """
    validate_config(cfg)
    running = np.asarray(running, dtype=np.float64)
    if running.shape != (cache.length,):
        raise ValueError(
            f"running accumulator shape {running.shape} does not match cache length {cache.length}"
        )
    weights, query_tags = _per_head_weights(cache, logits, query_tags, smoothing)
    averaged = head_average(weights)
    obs_rows = min(cfg.obs_window, averaged.shape[0])
    running = running + averaged[averaged.shape[0] - obs_rows :, :].sum(axis=0)

    if cache.length < cfg.budget:
        return cache, _noop_decision(cache, cfg), running
    cand = cache.length - cfg.recent
    pool = max(cfg.budget - cfg.recent, 0)
    mask = topk_mask(running[:cand], pool)
    new_cache = apply_prune(cache, mask, cfg.recent)
    kept = np.concatenate([mask.indices, np.arange(cand, cache.length)])
    decision = _decision(cache, cfg, mask, cache.tags[:cand], (pool, pool))
    return new_cache, decision, running[kept]


def full_cache_step(cache: KvCacheState, logits, query_tags, cfg: PruneConfig):
    """Reference policy: never evicts."""
    validate_config(cfg)
    return cache, _noop_decision(cache, cfg)


class CspPolicy:
    name = "csp"
    label = "csp (cross-self intersection)"

    def __init__(self, cfg: PruneConfig):
        self.cfg = cfg

    @property
    def deploy_smoothing(self) -> float:
        """Denominator constant used when replaying retained tokens."""
        return self.cfg.smoothing

    def step(self, cache, logits, query_tags):
        return csp_step(cache, logits, query_tags, self.cfg)


class GlobalTopKPolicy:
    name = "global-topk"
    label = "global-topk (SnapKV-like)"

    def __init__(self, cfg: PruneConfig, pool_width: int = 1, smoothing: float = 0.0):
        self.cfg = cfg
        self.pool_width = pool_width
        self.smoothing = smoothing

    @property
    def deploy_smoothing(self) -> float:
        return self.smoothing

    def step(self, cache, logits, query_tags):
        return global_topk_step(
            cache, logits, query_tags, self.cfg, self.pool_width, self.smoothing
        )


class AccumulatedScorePolicy:
    name = "accum"
    label = "accum (H2O-like)"

    def __init__(self, cfg: PruneConfig, smoothing: float = 0.0):
        self.cfg = cfg
        self.smoothing = smoothing
        self._running = np.zeros(0)

    @property
    def deploy_smoothing(self) -> float:
        return self.smoothing

    def step(self, cache, logits, query_tags):
        grown = cache.length - self._running.shape[0]
        if grown < 0:
            raise ValueError("cache shrank outside of this policy's own pruning")
        running = np.concatenate([self._running, np.zeros(grown)])
        new_cache, decision, self._running = accumulated_score_step(
            cache, logits, query_tags, self.cfg, running, self.smoothing
        )
        return new_cache, decision


class FullCachePolicy:
    name = "full"
    label = "full (no eviction)"

    def __init__(self, cfg: PruneConfig):
        self.cfg = cfg

    @property
    def deploy_smoothing(self) -> float:
        return 0.0

    def step(self, cache, logits, query_tags):
        return full_cache_step(cache, logits, query_tags, self.cfg)


_POLICY_CLASSES = {
    PolicyKind.CSP: CspPolicy,
    PolicyKind.GLOBAL_TOPK: GlobalTopKPolicy,
    PolicyKind.ACCUMULATED_SCORE: AccumulatedScorePolicy,
    PolicyKind.FULL_CACHE: FullCachePolicy,
}

POLICY_NAMES = tuple(kind.value for kind in PolicyKind)

POLICY_LABELS = {kind.value: cls.label for kind, cls in _POLICY_CLASSES.items()}


def make_policy(name: str | PolicyKind, cfg: PruneConfig, **kwargs):
    """Instantiate a policy by registry name ("csp", "global-topk", ...)."""
    try:
        kind = name if isinstance(name, PolicyKind) else PolicyKind(name)
    except ValueError:
        raise ValueError(f"unknown policy {name!r}; choices: {', '.join(POLICY_NAMES)}")
    return _POLICY_CLASSES[kind](cfg, **kwargs)
