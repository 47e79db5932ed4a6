"""Attention scoring primitives.

Logits -> weights -> a trimmed observation block, with an optional additive
constant in the softmax denominator. The smoothed form exists because pruning
removes denominator mass: dropping tokens from a softmax renormalizes the
survivors upward and sharpens the distribution, while an additive constant
can stand in for the evicted mass and keep the kept weights near their
original values.

All matrices here are float64 ndarrays; rows are queries, columns are keys.
"""

from __future__ import annotations

import numpy as np


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if x.size and not np.isfinite(x).all():
        raise ValueError(f"{name} must contain finite entries only")
    return x


def attention_logits(queries, keys, head_dim: int | None = None) -> np.ndarray:
    """Scaled dot-product logits, shape (n_queries, n_keys).

    head_dim sets the 1/sqrt(d) scale; by default it is the shared inner
    dimension, but it can be overridden (useful when vectors are padded or
    the scale is calibrated separately).
    """
    queries = _as_matrix(queries, "queries")
    keys = _as_matrix(keys, "keys")
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(
            f"queries and keys disagree on inner dimension: {queries.shape[1]} vs {keys.shape[1]}"
        )
    if head_dim is None:
        head_dim = queries.shape[1]
    if head_dim <= 0:
        raise ValueError(f"head_dim must be positive, got {head_dim}")
    return queries @ keys.T / np.sqrt(float(head_dim))


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with max-shift stabilization.

    Every row of the result is a probability vector; translating a row by a
    constant leaves its output unchanged.
    """
    logits = _as_matrix(logits, "logits")
    if logits.shape[1] == 0:
        return logits.copy()
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _kept_mask(logits: np.ndarray, kept) -> np.ndarray:
    """Normalize the `kept` argument to a boolean (rows, cols) mask."""
    rows, cols = logits.shape
    if kept is None:
        return np.ones((rows, cols), dtype=bool)
    kept = np.asarray(kept)
    if kept.dtype == bool:
        mask = np.broadcast_to(kept, (rows, cols)).copy()
    else:
        # Integer column indices, shared by every row.
        idx = kept.astype(np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= cols):
            raise ValueError(f"kept indices out of range for {cols} columns")
        mask = np.zeros((rows, cols), dtype=bool)
        mask[:, idx] = True
    return mask


def smoothed_softmax_rows(logits, smoothing: float, kept=None) -> np.ndarray:
    """Softmax restricted to kept columns, with an additive denominator term.

    For row O and kept set S, entry i in S becomes

        exp(O_i) / (smoothing + sum_{j in S} exp(O_j))

    and entries outside S are exactly zero. smoothing = 0 with S = all
    columns reproduces softmax_rows. Row sums are < 1 whenever smoothing > 0,
    and setting smoothing to the dropped exponential mass reproduces the
    full softmax on the kept columns.

    Parameters
    ----------
    logits : (rows, cols) array
    smoothing : float
        Non-negative constant, interpreted on the raw logit scale.
    kept : None | bool array | int index array
        Columns eligible per row. None keeps everything; a 1-D boolean or
        index array is shared across rows; a (rows, cols) boolean mask is
        used as-is. A row whose kept set is empty is an error when
        smoothing == 0 and an all-zero row otherwise.
    """
    logits = _as_matrix(logits, "logits")
    if not smoothing >= 0.0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")
    mask = _kept_mask(logits, kept)

    empty = ~mask.any(axis=1)
    if empty.any() and smoothing == 0.0:
        raise ValueError("a row has an empty kept set and smoothing is 0; weights are undefined")

    # Shift each row by max(kept max, ln smoothing) so that neither the
    # exponentials nor the smoothing term can overflow.
    row_max = np.where(empty, 0.0, np.where(mask, logits, -np.inf).max(axis=1))
    with np.errstate(divide="ignore"):
        log_smoothing = np.log(smoothing) if smoothing > 0.0 else -np.inf
    shift = np.maximum(row_max, log_smoothing)

    expd = np.where(mask, np.exp(logits - shift[:, None]), 0.0)
    # exp(ln n - shift) instead of n * exp(-shift): the latter is 0 * inf
    # (NaN) when n == 0 and the row max is strongly negative.
    denom = np.exp(log_smoothing - shift) + expd.sum(axis=1)
    out = expd / denom[:, None]
    out[empty] = 0.0
    return out


def head_average(weights) -> np.ndarray:
    """Mean over the head axis of a (heads, rows, cols) stack."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3:
        raise ValueError(f"expected (heads, rows, cols), got shape {weights.shape}")
    if weights.shape[0] < 1:
        raise ValueError("need at least one head")
    return weights.mean(axis=0)


def trim_observation(weights, obs_window: int, recent: int) -> np.ndarray:
    """Trailing obs_window rows x leading (cols - recent) columns.

    This is the scoring view: only the newest queries vote, and the recent
    keys are never candidates so their columns are dropped. obs_window
    larger than the row count keeps every row.
    """
    weights = _as_matrix(weights, "weights")
    rows, cols = weights.shape
    if obs_window < 1:
        raise ValueError(f"obs_window must be >= 1, got {obs_window}")
    if recent < 0:
        raise ValueError(f"recent must be >= 0, got {recent}")
    if recent >= cols:
        raise ValueError(f"recent window ({recent}) swallows every key column ({cols})")
    keep_rows = min(obs_window, rows)
    return weights[rows - keep_rows :, : cols - recent]
