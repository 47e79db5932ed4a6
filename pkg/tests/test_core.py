"""Tests for tag handling, config validation, and the cache container."""

import numpy as np
import pytest

from kvprune.core import (
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


class TestTags:
    def test_enum_values_are_byte_codes(self):
        assert int(ModalityTag.TEXT) == 0
        assert int(ModalityTag.VISUAL) == 1

    def test_as_tags_accepts_mixed_input(self):
        tags = as_tags([TEXT, 1, 0, ModalityTag.VISUAL])
        assert tags.dtype == np.uint8
        np.testing.assert_array_equal(tags, [0, 1, 0, 1])

    def test_as_tags_rejects_other_values(self):
        with pytest.raises(ValueError, match="0 .* or 1"):
            as_tags([0, 1, 2])

    def test_modality_index_partitions(self):
        """Text and visual positions together cover every index once."""
        rng = np.random.default_rng(42)
        for _ in range(50):
            tags = rng.integers(0, 2, size=rng.integers(1, 40))
            text, visual = modality_index(tags)
            merged = np.sort(np.concatenate([text, visual]))
            np.testing.assert_array_equal(merged, np.arange(tags.size))
            assert (tags[text] == 0).all()
            assert (tags[visual] == 1).all()

    def test_tag_counts(self):
        assert tag_counts([0, 1, 1, 0, 1]) == (2, 3)
        assert tag_counts([]) == (0, 0)


class TestPruneConfig:
    def test_defaults_are_valid(self):
        cfg = PruneConfig(budget=100, recent=20, obs_window=32)
        assert cfg.cross_ratio == 0.5
        assert cfg.smoothing == 1.0
        assert cfg.widen_to_budget is False
        assert validate_config(cfg) is cfg

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"budget": 0}, "budget"),
            ({"budget": -3}, "budget"),
            ({"recent": -1}, "recent"),
            ({"recent": 100}, "recent"),
            ({"recent": 150}, "recent"),
            ({"obs_window": 0}, "obs_window"),
            ({"cross_ratio": -0.1}, "cross_ratio"),
            ({"cross_ratio": 1.5}, "cross_ratio"),
            ({"smoothing": -1.0}, "smoothing"),
            ({"recency_bias": 0.0}, "recency_bias"),
            ({"head_mode": "mean"}, "head_mode"),
        ],
    )
    def test_invalid_fields_name_the_culprit(self, kwargs, field):
        base = dict(budget=100, recent=20, obs_window=32)
        base.update(kwargs)
        with pytest.raises(ValueError, match=field):
            PruneConfig(**base)

    def test_with_updates_revalidates(self):
        cfg = PruneConfig(budget=100, recent=20, obs_window=32)
        bigger = cfg.with_updates(budget=200)
        assert bigger.budget == 200
        assert cfg.budget == 100
        with pytest.raises(ValueError, match="recent"):
            cfg.with_updates(recent=100)

    def test_recent_may_be_zero(self):
        cfg = PruneConfig(budget=10, recent=0, obs_window=4)
        assert cfg.recent == 0


class TestKvCacheState:
    def _cache(self, length=6, dim=4, seed=42):
        rng = np.random.default_rng(seed)
        return KvCacheState(
            keys=rng.standard_normal((length, dim)),
            values=rng.standard_normal((length, dim)),
            tags=rng.integers(0, 2, size=length),
        )

    def test_length_and_head_dim(self):
        cache = self._cache(length=6, dim=4)
        assert cache.length == 6
        assert cache.head_dim == 4

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(42)
        with pytest.raises(ValueError):
            KvCacheState(
                keys=rng.standard_normal((5, 4)),
                values=rng.standard_normal((4, 4)),
                tags=np.zeros(5, dtype=np.uint8),
            )
        with pytest.raises(ValueError):
            KvCacheState(
                keys=rng.standard_normal((5, 4)),
                values=rng.standard_normal((5, 4)),
                tags=np.zeros(4, dtype=np.uint8),
            )

    def test_appended_concatenates(self):
        cache = self._cache(length=3)
        rng = np.random.default_rng(7)
        keys = rng.standard_normal((2, 4))
        values = rng.standard_normal((2, 4))
        grown = cache.appended(keys, values, [0, 1])
        assert grown.length == 5
        np.testing.assert_allclose(grown.keys[3:], keys)
        np.testing.assert_allclose(grown.values[3:], values)
        np.testing.assert_array_equal(grown.tags[3:], [0, 1])
        assert cache.length == 3  # original untouched

    def test_gather_preserves_order(self):
        cache = self._cache(length=6)
        sub = cache.gather([1, 3, 4])
        assert sub.length == 3
        np.testing.assert_allclose(sub.keys, cache.keys[[1, 3, 4]])
        np.testing.assert_array_equal(sub.tags, cache.tags[[1, 3, 4]])
