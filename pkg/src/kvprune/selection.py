"""Top-k masks, budget allocation, and cache pruning.

Selection happens over the candidate universe 0..L'-1, which is the cache
minus its trailing recent window; the recent block is concatenated back
unconditionally by apply_prune, so a mask can never duplicate or evict a
recent token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import KvCacheState, PruneConfig, tag_counts
from .decompose import ImportanceScores


@dataclass(frozen=True)
class PruneMask:
    """Sorted set of retained candidate indices over a fixed universe."""

    indices: np.ndarray
    universe_size: int
    # Frozen dataclass with an array field: normalize in __post_init__ via
    # object.__setattr__, then treat as immutable.

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size != np.asarray(self.indices).size:
            raise ValueError("mask indices must not contain duplicates")
        if self.universe_size < 0:
            raise ValueError(f"universe_size must be >= 0, got {self.universe_size}")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.universe_size):
            raise ValueError(
                f"mask indices must lie in [0, {self.universe_size}), got range [{idx[0]}, {idx[-1]}]"
            )
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.universe_size, dtype=bool)
        out[self.indices] = True
        return out

    @classmethod
    def full(cls, universe_size: int) -> "PruneMask":
        return cls(np.arange(universe_size), universe_size)


def topk_mask(scores, k: int) -> PruneMask:
    """Mask of the k highest scores; ties go to the smaller index.

    k = 0 gives an empty mask, k >= len(scores) retains everything.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    k = min(int(k), scores.size)
    # Stable sort on negated scores: equal scores keep ascending index order.
    order = np.argsort(-scores, kind="stable")
    return PruneMask(order[:k], scores.size)


def intersect_masks(a: PruneMask, b: PruneMask) -> PruneMask:
    if a.universe_size != b.universe_size:
        raise ValueError(
            f"mask universes differ: {a.universe_size} vs {b.universe_size}"
        )
    return PruneMask(np.intersect1d(a.indices, b.indices), a.universe_size)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def budget_to_k(cfg: PruneConfig, candidate_count: int) -> tuple[int, int]:
    """Split the selection pool between the intra and inter rankings.

    pool = budget - recent tokens are available for scored retention;
    cross_ratio of them go to the inter ranking, the rest to intra. Both
    are capped at the candidate count. A zero share is possible at the
    ratio extremes and is interpreted by cross_self_select as "that
    ranking imposes no constraint".
    """
    if candidate_count < 0:
        raise ValueError(f"candidate_count must be >= 0, got {candidate_count}")
    pool = max(cfg.budget - cfg.recent, 0)
    k_inter = _round_half_up(cfg.cross_ratio * pool)
    k_intra = pool - k_inter
    return min(k_intra, candidate_count), min(k_inter, candidate_count)


def _biased(scores: ImportanceScores, cfg: PruneConfig) -> tuple[np.ndarray, np.ndarray]:
    bias = np.ones(len(scores))
    if cfg.recency_bias != 1.0:
        start = max(len(scores) - cfg.obs_window, 0)
        bias[start:] = cfg.recency_bias
    return scores.intra * bias, scores.inter * bias


def cross_self_select(scores: ImportanceScores, cfg: PruneConfig) -> PruneMask:
    """Intersect the intra and inter top-k masks over the candidates.

    A candidate survives only if both rankings select it, so the achieved
    mask is usually smaller than the pool; with widen_to_budget the two k
    values grow in lock-step (ratio preserved, capped at the candidate
    count) until the intersection reaches the pool or every candidate is
    selected by both. A ranking whose allocation is zero (cross_ratio 0 or
    1) is treated as unconstrained rather than as an empty veto, which is
    what makes the ratio extremes mean pure-intra / pure-inter selection.
    """
    cand = len(scores)
    if cand == 0:
        raise ValueError("no candidates to select from")
    intra, inter = _biased(scores, cfg)
    pool = max(cfg.budget - cfg.recent, 0)
    k_intra, k_inter = budget_to_k(cfg, cand)

    # Effective k: a zero allocation selects everything instead of nothing.
    eff_intra = cand if k_intra == 0 else k_intra
    eff_inter = cand if k_inter == 0 else k_inter
    mask = intersect_masks(topk_mask(intra, eff_intra), topk_mask(inter, eff_inter))
    if not cfg.widen_to_budget:
        return mask

    target = min(pool, cand)
    t = pool
    while len(mask) < target and (eff_intra < cand or eff_inter < cand):
        t += 1
        kc = _round_half_up(cfg.cross_ratio * t)
        ki = t - kc
        # Effective sizes only grow; a side that started unconstrained
        # (zero share) stays unconstrained.
        eff_intra = max(eff_intra, min(ki, cand))
        eff_inter = max(eff_inter, min(kc, cand))
        mask = intersect_masks(topk_mask(intra, eff_intra), topk_mask(inter, eff_inter))
    return mask


def apply_prune(cache: KvCacheState, mask: PruneMask, recent: int) -> KvCacheState:
    """Retained candidates followed by the recent window, order preserved."""
    if recent < 0:
        raise ValueError(f"recent must be >= 0, got {recent}")
    if recent >= cache.length:
        raise ValueError(
            f"recent window ({recent}) must be smaller than the cache ({cache.length})"
        )
    if mask.universe_size != cache.length - recent:
        raise ValueError(
            f"mask universe {mask.universe_size} does not match candidate count {cache.length - recent}"
        )
    positions = np.concatenate(
        [mask.indices, np.arange(cache.length - recent, cache.length)]
    )
    return cache.gather(positions)


def mask_modality_counts(mask: PruneMask, key_tags) -> tuple[int, int]:
    """(text, visual) counts among the retained candidate indices."""
    key_tags = np.asarray(key_tags)
    if key_tags.shape[0] != mask.universe_size:
        raise ValueError(
            f"{key_tags.shape[0]} key tags for mask universe {mask.universe_size}"
        )
    return tag_counts(key_tags[mask.indices])
