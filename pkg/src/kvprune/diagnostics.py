"""Distribution diagnostics for attention weights.

These answer the question that motivates modality-split eviction in the
first place: do intra-modality and inter-modality attention weights actually
live on different distributions? `layer_report` pulls both sample sets out
of a recorded trace, smooths each into a density curve, and scores the gap
per layer with a Jensen-Shannon divergence (natural log, so the maximum is
ln 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decompose import block_views
from .scoring import softmax_rows, trim_observation
from .traceio import AttentionTrace

DEFAULT_BINS = 64
DEFAULT_EPSILON = 1e-10
GRID_POINTS = 512
BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class DensityCurve:
    """Gaussian-kernel density estimate on a fixed grid."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=np.float64))
        object.__setattr__(self, "density", np.asarray(self.density, dtype=np.float64))
        if self.grid.ndim != 1 or self.grid.shape != self.density.shape:
            raise ValueError("grid and density must be 1-D and equally long")
        if self.grid.size > 1 and not (np.diff(self.grid) > 0).all():
            raise ValueError("grid must be strictly ascending")
        if (self.density < 0).any():
            raise ValueError("density values must be nonnegative")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def mass(self) -> float:
        """Trapezoidal integral over the grid; close to 1 on a wide grid."""
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True)
class DivergenceReport:
    per_layer: list
    bins: int
    epsilon: float

    def __post_init__(self):
        for layer, value in self.per_layer:
            if not 0.0 <= value <= np.log(2.0) + 1e-12:
                raise ValueError(f"layer {layer}: divergence {value} outside [0, ln 2]")

    def values(self) -> list:
        return [value for _, value in self.per_layer]


def _clean_samples(samples, name: str) -> np.ndarray:
    out = np.asarray(samples, dtype=np.float64).ravel()
    if out.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    return out


def silverman_bandwidth(samples: np.ndarray) -> float:
    """1.06 * min(std, IQR/1.34) * n^(-1/5), floored to stay usable on
    degenerate samples (single point, all-equal)."""
    n = samples.size
    std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(samples, [75.0, 25.0])
    scale = min(std, (q75 - q25) / 1.34)
    return max(1.06 * scale * n ** (-0.2), BANDWIDTH_FLOOR)


def kde(samples, bandwidth: float | None = None, grid_points: int = GRID_POINTS) -> DensityCurve:
    """Gaussian kernel density estimate.

    The grid spans [min - 4h, max + 4h] so essentially all kernel mass lies
    inside it; with bandwidth=None, Silverman's rule picks h.
    """
    samples = _clean_samples(samples, "samples")
    if bandwidth is None:
        h = silverman_bandwidth(samples)
    else:
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        h = float(bandwidth)
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")

    grid = np.linspace(samples.min() - 4 * h, samples.max() + 4 * h, grid_points)
    norm = 1.0 / (samples.size * h * np.sqrt(2.0 * np.pi))
    density = np.zeros(grid_points)
    # Chunk the sample axis; layer-level sample sets can be large.
    for start in range(0, samples.size, 8192):
        chunk = samples[start : start + 8192]
        z = (grid[:, None] - chunk[None, :]) / h
        density += np.exp(-0.5 * z * z).sum(axis=1)
    return DensityCurve(grid=grid, density=density * norm, bandwidth=h)


def js_divergence(
    p_samples,
    q_samples,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Jensen-Shannon divergence between two sample sets.

    Both sets are histogrammed on their joint range, every bin gets epsilon
    before normalizing, and the divergence uses the natural log, so results
    fall in [0, ln 2]. Exactly symmetric in its arguments.
    """
    p = _clean_samples(p_samples, "p_samples")
    q = _clean_samples(q_samples, "q_samples")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")

    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    p_hist = np.histogram(p, bins=bins, range=(lo, hi))[0].astype(np.float64) + epsilon
    q_hist = np.histogram(q, bins=bins, range=(lo, hi))[0].astype(np.float64) + epsilon
    p_hist /= p_hist.sum()
    q_hist /= q_hist.sum()
    mid = 0.5 * (p_hist + q_hist)
    kl_p = float(np.sum(p_hist * np.log(p_hist / mid)))
    kl_q = float(np.sum(q_hist * np.log(q_hist / mid)))
    return 0.5 * kl_p + 0.5 * kl_q


@dataclass(frozen=True)
class LayerReport:
    """Per-layer intra/inter weight distributions and their divergence."""

    divergence: DivergenceReport
    curves: list  # one (intra DensityCurve, inter DensityCurve) per layer

    @property
    def layers(self) -> int:
        return len(self.curves)


def modality_weight_samples(
    trace: AttentionTrace,
    obs_window: int | None = None,
    recent: int = 0,
) -> list:
    """Per layer, collect (intra, inter) attention-weight samples.

    Every recorded step contributes: each head's logit block becomes a
    plain softmax weight matrix, optionally trimmed to the last obs_window
    query rows and all but the newest `recent` key columns, then split
    four ways by modality pairing. Text-to-text and visual-to-visual
    entries are intra; the mixed blocks are inter.
    """
    if recent < 0:
        raise ValueError("recent must be >= 0")
    full_tags = trace.full_tags
    intra: list[list[np.ndarray]] = [[] for _ in range(trace.layers)]
    inter: list[list[np.ndarray]] = [[] for _ in range(trace.layers)]
    length = trace.prefill_tags.size
    for step in trace.steps:
        length += step.new_tags.size
        rows = step.blocks.shape[2]
        window = rows if obs_window is None else min(obs_window, rows)
        cols = length - recent
        if cols < 1:
            raise ValueError(f"recent={recent} leaves no keys at length {length}")
        query_tags = full_tags[length - window : length]
        key_tags = full_tags[:cols]
        for layer in range(trace.layers):
            for head in range(trace.heads):
                weights = softmax_rows(np.asarray(step.blocks[layer, head], dtype=np.float64))
                trimmed = trim_observation(weights, window, recent)
                views = block_views(trimmed, query_tags, key_tags)
                intra[layer].append(views.text_text.ravel())
                intra[layer].append(views.visual_visual.ravel())
                inter[layer].append(views.visual_text.ravel())
                inter[layer].append(views.text_visual.ravel())
    return [
        (np.concatenate(intra[layer]), np.concatenate(inter[layer]))
        for layer in range(trace.layers)
    ]


def layer_report(
    trace: AttentionTrace,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
    bandwidth: float | None = None,
    obs_window: int | None = None,
    recent: int = 0,
) -> LayerReport:
    """Divergence and density curves per layer of a trace.

    Needs both modalities present among the sampled pairs; a single-modality
    trace has no inter samples to compare.
    """
    samples = modality_weight_samples(trace, obs_window=obs_window, recent=recent)
    per_layer = []
    curves = []
    for layer, (intra, inter) in enumerate(samples):
        if intra.size == 0 or inter.size == 0:
            raise ValueError(
                f"layer {layer} has an empty modality pairing; diagnostics need "
                "both intra- and inter-modality weights"
            )
        per_layer.append((layer, js_divergence(intra, inter, bins=bins, epsilon=epsilon)))
        curves.append((kde(intra, bandwidth=bandwidth), kde(inter, bandwidth=bandwidth)))
    return LayerReport(
        divergence=DivergenceReport(per_layer=per_layer, bins=bins, epsilon=epsilon),
        curves=curves,
    )
