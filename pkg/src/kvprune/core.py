"""Shared domain types for modality-aware KV cache pruning.

Everything downstream (scoring, selection, policies, the simulator) speaks in
terms of three things defined here: per-token modality tags, the pruning
configuration, and a single-layer KV cache snapshot. Attention matrices are
plain float64 numpy arrays; the ops that consume them validate shapes at the
boundary instead of wrapping them in classes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

HEAD_MODES = ("averaged", "per-head")


class ModalityTag(IntEnum):
    """Per-token modality label. Values double as the on-disk byte encoding."""

    TEXT = 0
    VISUAL = 1


TEXT = ModalityTag.TEXT
VISUAL = ModalityTag.VISUAL


def as_tags(seq) -> np.ndarray:
    """Coerce a tag sequence to a uint8 array of ModalityTag values.

    Accepts any iterable of ints / ModalityTag members. Arbitrary
    interleavings are fine; only the values are constrained.
    """
    tags = np.asarray(seq, dtype=np.uint8).ravel()
    if tags.size and not np.isin(tags, (ModalityTag.TEXT, ModalityTag.VISUAL)).all():
        bad = tags[~np.isin(tags, (ModalityTag.TEXT, ModalityTag.VISUAL))][0]
        raise ValueError(f"modality tags must be 0 (text) or 1 (visual), got {bad}")
    return tags


def modality_index(tags) -> tuple[np.ndarray, np.ndarray]:
    """Positions of each modality, order preserved.

    Returns (text_positions, visual_positions); together they partition
    range(len(tags)).
    """
    tags = as_tags(tags)
    text = np.flatnonzero(tags == ModalityTag.TEXT)
    visual = np.flatnonzero(tags == ModalityTag.VISUAL)
    return text, visual


def tag_counts(tags) -> tuple[int, int]:
    """(text_count, visual_count) for a tag sequence."""
    text, visual = modality_index(tags)
    return int(text.size), int(visual.size)


@dataclass(frozen=True)
class PruneConfig:
    """Knobs shared by every eviction policy.

    budget
        Maximum cache length in tokens; pruning triggers once the cache
        reaches it.
    recent
        Trailing window that is always retained and never scored.
    obs_window
        Number of trailing query rows used for importance estimation.
    cross_ratio
        Fraction of the selection pool allocated to inter-modality scores;
        the remainder goes to intra-modality scores.
    smoothing
        Additive constant in the attention denominator (0 disables it).
        The csp policy applies it when scoring and when replaying retained
        tokens; baselines default to plain softmax.
    recency_bias
        Multiplicative weight on the trailing obs_window candidate scores
        before top-k. 1.0 is a no-op.
    widen_to_budget
        Grow both top-k sizes in lock-step until the intersected mask fills
        the pool (or every candidate is selected).
    head_mode
        "averaged" scores the head-mean attention once; "per-head" selects
        per head and merges masks by vote.
    seed
        RNG seed recorded alongside results.
    """

    budget: int
    recent: int
    obs_window: int
    cross_ratio: float = 0.5
    smoothing: float = 1.0
    recency_bias: float = 1.0
    widen_to_budget: bool = False
    head_mode: str = "averaged"
    seed: int = 0

    def __post_init__(self):
        validate_config(self)

    def with_updates(self, **kwargs) -> "PruneConfig":
        return replace(self, **kwargs)


def validate_config(cfg: PruneConfig) -> PruneConfig:
    """Check every PruneConfig invariant; raise on the first violation.

    Idempotent: validating an already valid config returns it unchanged.
    """
    if int(cfg.budget) != cfg.budget or cfg.budget <= 0:
        raise ValueError(f"budget must be a positive integer, got {cfg.budget}")
    if int(cfg.recent) != cfg.recent or cfg.recent < 0:
        raise ValueError(f"recent must be a non-negative integer, got {cfg.recent}")
    if cfg.recent >= cfg.budget:
        raise ValueError(
            f"recent must be smaller than budget, got recent={cfg.recent} budget={cfg.budget}"
        )
    if int(cfg.obs_window) != cfg.obs_window or cfg.obs_window < 1:
        raise ValueError(f"obs_window must be a positive integer, got {cfg.obs_window}")
    if not 0.0 <= cfg.cross_ratio <= 1.0:
        raise ValueError(f"cross_ratio must lie in [0, 1], got {cfg.cross_ratio}")
    if not cfg.smoothing >= 0.0:
        raise ValueError(f"smoothing must be >= 0, got {cfg.smoothing}")
    if not cfg.recency_bias > 0.0:
        raise ValueError(f"recency_bias must be > 0, got {cfg.recency_bias}")
    if cfg.head_mode not in HEAD_MODES:
        raise ValueError(f"head_mode must be one of {HEAD_MODES}, got {cfg.head_mode!r}")
    if int(cfg.seed) != cfg.seed:
        raise ValueError(f"seed must be an integer, got {cfg.seed}")
    return cfg


@dataclass
class KvCacheState:
    """One layer's cached keys and values plus per-token modality tags.

    Keys and values share the shape (length, head_dim); with multi-query
    heads there is a single K/V stream per layer regardless of the number
    of query heads.
    """

    keys: np.ndarray
    values: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.tags = as_tags(self.tags)
        if self.keys.ndim != 2 or self.values.ndim != 2:
            raise ValueError(
                f"keys/values must be 2-D (length, head_dim), got {self.keys.shape} and {self.values.shape}"
            )
        if self.keys.shape != self.values.shape:
            raise ValueError(
                f"keys and values must share a shape, got {self.keys.shape} vs {self.values.shape}"
            )
        if self.tags.shape[0] != self.keys.shape[0]:
            raise ValueError(
                f"tags length {self.tags.shape[0]} does not match cache length {self.keys.shape[0]}"
            )

    @property
    def length(self) -> int:
        return int(self.keys.shape[0])

    @property
    def head_dim(self) -> int:
        return int(self.keys.shape[1])

    def appended(self, keys, values, tags) -> "KvCacheState":
        """New state with extra tokens appended at the end."""
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        return KvCacheState(
            keys=np.concatenate([self.keys, keys], axis=0),
            values=np.concatenate([self.values, values], axis=0),
            tags=np.concatenate([self.tags, as_tags(tags)]),
        )

    def gather(self, positions) -> "KvCacheState":
        """New state holding only the given positions, in the given order."""
        positions = np.asarray(positions, dtype=np.int64)
        return KvCacheState(
            keys=self.keys[positions],
            values=self.values[positions],
            tags=self.tags[positions],
        )
