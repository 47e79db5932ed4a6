"""Synthetic decode loops for exercising eviction policies end to end.

The decoder here is a toy, but a principled one: token embeddings and
projection matrices are drawn once from seeded generators, queries get one
projection per layer and head while keys and values share a single stream
per layer (multi-query attention, which is what makes a single KvCacheState
per layer the right shape), and the raw score between a query and a key is

    spread * (q . k / sqrt(head_dim)) - shift * [tags differ]

so `shift` depresses cross-modality logits and `spread` widens the score
distribution. With a text-heavy decode tail this reproduces the failure mode
the cross-self policy targets: plain top-k drifts toward text keys while the
intersection rule keeps visual keys competitive.

Logit blocks are materialized in float32, the trace precision, so a live
synthetic run and a replay of its recorded trace rank keys identically.

`run_decode` drives any policy over either source (a SynthSpec / decoder, or
an AttentionTrace). Traces carry no values or query vectors, so replays
report no reconstruction error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import TEXT, VISUAL, KvCacheState, PruneConfig, as_tags, tag_counts
from .policies import PolicyDecision, make_policy
from .scoring import attention_logits, smoothed_softmax_rows, softmax_rows
from .traceio import AttentionTrace, TraceStep

INTERLEAVE_MODES = ("block", "alternating", "random")

THREADS_ENV = "KVPRUNE_THREADS"


@dataclass(frozen=True)
class SynthSpec:
    """Shape and score model of a synthetic multimodal decode."""

    seed: int = 0
    text_len: int = 64
    visual_len: int = 64
    interleave: str = "alternating"
    layers: int = 2
    heads: int = 4
    head_dim: int = 32
    steps: int = 32
    shift: float = 2.0
    spread: float = 1.0

    def __post_init__(self):
        if self.text_len < 1 or self.visual_len < 1:
            raise ValueError("text_len and visual_len must both be >= 1")
        if self.interleave not in INTERLEAVE_MODES:
            raise ValueError(
                f"interleave must be one of {INTERLEAVE_MODES}, got {self.interleave!r}"
            )
        if self.layers < 1 or self.heads < 1 or self.head_dim < 1:
            raise ValueError("layers, heads and head_dim must all be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.spread > 0:
            raise ValueError("spread must be positive")

    @property
    def prefill_len(self) -> int:
        return self.text_len + self.visual_len

    @property
    def final_len(self) -> int:
        return self.prefill_len + self.steps


def prefill_tags(spec: SynthSpec) -> np.ndarray:
    """Lay out the prefill modalities; decode steps always append text."""
    if spec.interleave == "block":
        tags = [VISUAL] * spec.visual_len + [TEXT] * spec.text_len
    elif spec.interleave == "alternating":
        tags = []
        text, visual = spec.text_len, spec.visual_len
        while text or visual:
            if visual:
                tags.append(VISUAL)
                visual -= 1
            if text:
                tags.append(TEXT)
                text -= 1
    else:
        tags = [VISUAL] * spec.visual_len + [TEXT] * spec.text_len
        rng = np.random.default_rng([spec.seed, 0])
        rng.shuffle(tags)
    return as_tags(tags)


class SyntheticDecoder:
    """Deterministic source of logit blocks, keys and values for one run."""

    provides_values = True

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.layers = spec.layers
        self.heads = spec.heads
        self.head_dim = spec.head_dim
        self.prefill_tags = prefill_tags(spec)
        self.full_tags = np.concatenate(
            [self.prefill_tags, np.full(spec.steps, TEXT, dtype=np.uint8)]
        )

        d = spec.head_dim
        emb_rng = np.random.default_rng([spec.seed, 1])
        proj_rng = np.random.default_rng([spec.seed, 2])
        embeddings = emb_rng.standard_normal((spec.final_len, d))
        scale = 1.0 / np.sqrt(d)
        # One K/V projection per layer, one Q projection per layer and head.
        self._keys = np.empty((spec.layers, spec.final_len, d))
        self._values = np.empty((spec.layers, spec.final_len, d))
        self._queries = np.empty((spec.layers, spec.heads, spec.final_len, d))
        for layer in range(spec.layers):
            w_k = proj_rng.standard_normal((d, d)) * scale
            w_v = proj_rng.standard_normal((d, d)) * scale
            self._keys[layer] = embeddings @ w_k.T
            self._values[layer] = embeddings @ w_v.T
            for head in range(spec.heads):
                w_q = proj_rng.standard_normal((d, d)) * scale
                self._queries[layer, head] = embeddings @ w_q.T

    def keys(self, layer: int, ids: np.ndarray) -> np.ndarray:
        return self._keys[layer][ids]

    def values(self, layer: int, ids: np.ndarray) -> np.ndarray:
        return self._values[layer][ids]

    def logit_block(self, layer: int, query_ids: np.ndarray, key_ids: np.ndarray) -> np.ndarray:
        """Raw scores (heads, queries, keys) between token ids, in float32."""
        spec = self.spec
        q_tags = self.full_tags[query_ids]
        k_tags = self.full_tags[key_ids]
        cross = (q_tags[:, None] != k_tags[None, :]).astype(np.float64)
        out = np.empty((spec.heads, len(query_ids), len(key_ids)))
        keys = self._keys[layer][key_ids]
        for head in range(spec.heads):
            queries = self._queries[layer, head][query_ids]
            out[head] = spec.spread * attention_logits(queries, keys) - spec.shift * cross
        return out.astype(np.float32).astype(np.float64)

    def records(self, obs_window: int):
        """Yield (new_tags, blocks, full_len) per step; step 0 is the prefill."""
        spec = self.spec
        length = spec.prefill_len
        for step in range(spec.steps + 1):
            if step == 0:
                new_tags = np.zeros(0, dtype=np.uint8)
            else:
                new_tags = np.array([TEXT], dtype=np.uint8)
                length += 1
            rows = min(obs_window, length)
            query_ids = np.arange(length - rows, length)
            key_ids = np.arange(length)
            blocks = np.stack(
                [self.logit_block(layer, query_ids, key_ids) for layer in range(spec.layers)]
            )
            yield new_tags, blocks, length


class _TraceSource:
    """Adapter giving an AttentionTrace the decoder's record interface."""

    provides_values = False

    def __init__(self, trace: AttentionTrace):
        self.trace = trace
        self.layers = trace.layers
        self.heads = trace.heads
        self.head_dim = trace.head_dim
        self.prefill_tags = trace.prefill_tags
        self.full_tags = trace.full_tags

    def records(self, obs_window: int):
        length = self.prefill_tags.size
        for step in self.trace.steps:
            length += step.new_tags.size
            yield step.new_tags, np.asarray(step.blocks, dtype=np.float64), length


@dataclass
class RunReport:
    """Everything a completed decode run produced, per step and per layer."""

    policy: str
    config: PruneConfig
    seed: int
    full_length: int
    per_step: list[list[PolicyDecision]]
    bytes_cached: list[int]
    recon_error: list[float]
    retained_ids: list[np.ndarray]
    retained_tags: list[np.ndarray]

    @property
    def steps(self) -> int:
        return len(self.per_step)

    @property
    def final_lengths(self) -> list[int]:
        return [decisions[-1].achieved_occupancy for decisions in _transpose(self.per_step)]

    @property
    def achieved_budget_fraction(self) -> float:
        mean_len = float(np.mean([ids.size for ids in self.retained_ids]))
        return mean_len / self.full_length

    @property
    def retained_counts(self) -> tuple[int, int]:
        text = sum(int(tag_counts(tags)[0]) for tags in self.retained_tags)
        visual = sum(int(tag_counts(tags)[1]) for tags in self.retained_tags)
        return text, visual

    @property
    def retained_modality_mix(self) -> tuple[float, float]:
        text, visual = self.retained_counts
        total = max(text + visual, 1)
        return text / total, visual / total


def _transpose(per_step: list[list[PolicyDecision]]) -> list[list[PolicyDecision]]:
    layers = len(per_step[0])
    return [[step[layer] for step in per_step] for layer in range(layers)]


def _as_source(source):
    if isinstance(source, SynthSpec):
        return SyntheticDecoder(source)
    if isinstance(source, AttentionTrace):
        return _TraceSource(source)
    if isinstance(source, (SyntheticDecoder, _TraceSource)):
        return source
    raise TypeError(f"cannot drive a decode from {type(source).__name__}")


def budget_for_fraction(fraction: float, full_length: int, recent: int) -> int:
    """Convert a budget fraction of the final length into a token budget."""
    if not 0 < fraction:
        raise ValueError("budget fraction must be positive")
    return max(recent + 1, int(np.floor(fraction * full_length + 0.5)))


def run_decode(source, policy_name: str, cfg: PruneConfig, **policy_kwargs) -> RunReport:
    """Drive one policy over a synthetic decode or a recorded trace.

    Each step appends the new tokens to every layer's cache, lets the
    per-layer policy instance prune, then (synthetic sources only) measures
    the reconstruction error of the latest query's attention output against
    the unpruned cache, averaged over layers.
    """
    src = _as_source(source)
    policies = [make_policy(policy_name, cfg, **policy_kwargs) for _ in range(src.layers)]
    deploy_smoothing = policies[0].deploy_smoothing

    caches: list[KvCacheState] = []
    retained: list[np.ndarray] = []
    prefill_len = src.prefill_tags.size
    for layer in range(src.layers):
        ids = np.arange(prefill_len)
        if src.provides_values:
            keys, values = src.keys(layer, ids), src.values(layer, ids)
        else:
            keys = np.zeros((prefill_len, src.head_dim))
            values = np.zeros((prefill_len, src.head_dim))
        caches.append(KvCacheState(keys=keys, values=values, tags=src.prefill_tags))
        retained.append(ids)

    per_step: list[list[PolicyDecision]] = []
    bytes_cached: list[int] = []
    recon_error: list[float] = []

    for new_tags, blocks, full_len in src.records(cfg.obs_window):
        if blocks.shape[3] != full_len:
            raise ValueError(
                f"source produced blocks over {blocks.shape[3]} keys at length {full_len}"
            )
        if new_tags.size:
            new_ids = np.arange(full_len - new_tags.size, full_len)
            for layer in range(src.layers):
                if src.provides_values:
                    keys = src.keys(layer, new_ids)
                    values = src.values(layer, new_ids)
                else:
                    keys = np.zeros((new_ids.size, src.head_dim))
                    values = np.zeros((new_ids.size, src.head_dim))
                caches[layer] = caches[layer].appended(keys, values, new_tags)
                retained[layer] = np.concatenate([retained[layer], new_ids])

        rows = blocks.shape[2]
        query_tags = src.full_tags[full_len - rows : full_len]
        decisions: list[PolicyDecision] = []
        for layer in range(src.layers):
            logits = blocks[layer][:, :, retained[layer]]
            cache, decision = policies[layer].step(caches[layer], logits, query_tags)
            if decision.pruned:
                length = caches[layer].length
                keep = np.concatenate(
                    [decision.retained_mask.indices, np.arange(length - cfg.recent, length)]
                )
                retained[layer] = retained[layer][keep]
            caches[layer] = cache
            decisions.append(decision)
        per_step.append(decisions)
        bytes_cached.append(
            sum(cache.length * 2 * src.head_dim * 4 for cache in caches)
        )
        if src.provides_values:
            recon_error.append(_recon_error(src, full_len, retained, deploy_smoothing))

    return RunReport(
        policy=policies[0].name,
        config=cfg,
        seed=cfg.seed,
        full_length=int(src.full_tags.size),
        per_step=per_step,
        bytes_cached=bytes_cached,
        recon_error=recon_error,
        retained_ids=[ids.copy() for ids in retained],
        retained_tags=[src.full_tags[ids] for ids in retained],
    )


def _recon_error(decoder, full_len: int, retained: list[np.ndarray], smoothing: float) -> float:
    """Mean over layers of ||full attention output - pruned output|| for the
    newest query, heads concatenated."""
    all_ids = np.arange(full_len)
    query = np.array([full_len - 1])
    errors = []
    for layer in range(decoder.layers):
        kept = retained[layer]
        block = decoder.logit_block(layer, query, all_ids)
        diffs = []
        for head in range(decoder.heads):
            logits = block[head]
            full_out = softmax_rows(logits) @ decoder.values(layer, all_ids)
            pruned_w = smoothed_softmax_rows(logits[:, kept], smoothing)
            pruned_out = pruned_w @ decoder.values(layer, kept)
            diffs.append(full_out[0] - pruned_out[0])
        errors.append(float(np.linalg.norm(np.concatenate(diffs))))
    return float(np.mean(errors))


def record_trace(spec: SynthSpec, obs_window: int) -> AttentionTrace:
    """Run the synthetic decoder and capture its logit blocks as a trace."""
    if obs_window < 1:
        raise ValueError("obs_window must be >= 1")
    decoder = SyntheticDecoder(spec)
    steps = [
        TraceStep(new_tags=new_tags, blocks=blocks.astype(np.float32))
        for new_tags, blocks, _ in decoder.records(obs_window)
    ]
    return AttentionTrace(
        layers=spec.layers,
        heads=spec.heads,
        head_dim=spec.head_dim,
        prefill_tags=decoder.prefill_tags,
        steps=steps,
    )


SWEEP_AXES = ("budget_fraction", "cross_ratio", "smooth_n")


def _thread_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return max(1, os.cpu_count() or 1)


def sweep(
    axis: str,
    grid,
    spec: SynthSpec,
    cfg: PruneConfig,
    policy_name: str,
    threads: int | None = None,
    **policy_kwargs,
) -> list[tuple[float, RunReport]]:
    """Run one decode per grid value, varying a single config axis.

    Rows come back in grid order regardless of thread scheduling. The
    budget_fraction axis recomputes the token budget from the final length;
    the other axes keep cfg.budget as given.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = [float(v) for v in grid]
    if not values:
        raise ValueError("sweep grid is empty")

    def configured(value: float) -> PruneConfig:
        if axis == "budget_fraction":
            return cfg.with_updates(
                budget=budget_for_fraction(value, spec.final_len, cfg.recent)
            )
        if axis == "cross_ratio":
            return cfg.with_updates(cross_ratio=value)
        return cfg.with_updates(smoothing=value)

    def task(value: float) -> tuple[float, RunReport]:
        return value, run_decode(spec, policy_name, configured(value), **policy_kwargs)

    workers = min(_thread_count(threads), len(values))
    if workers == 1:
        return [task(v) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, values))
