"""
Tests for the solution cache.

This module contains tests for the cache of follower solutions.
"""

import numpy as np
import pytest

from src.utils.cache import SolutionCache, leader_key


@pytest.fixture
def cache():
    """Create a solution cache for testing."""
    return SolutionCache(max_size=5)


def test_cache_get_set(cache):
    """Test basic cache get and set operations."""
    cache.set(np.array([1.0, 0.5]), "value1")

    assert cache.get(np.array([1.0, 0.5])) == "value1"
    assert cache.get(np.array([1.0, 0.25])) is None


def test_cache_key_is_exact():
    """Test that keys depend on the exact leader vector only."""
    assert leader_key(np.array([1.0, 2.0])) == leader_key([1, 2])
    assert leader_key(np.array([1.0, 2.0])) != leader_key(np.array([1.0, 2.0 + 1e-15]))
    # Strided views hash like their contiguous copy
    wide = np.array([[1.0, 9.0], [2.0, 9.0]])
    assert leader_key(wide[:, 0]) == leader_key(np.array([1.0, 2.0]))


def test_cache_max_size(cache):
    """Test cache max size functionality."""
    for i in range(5):
        cache.set(np.array([float(i)]), f"value{i}")
    assert len(cache) == 5

    # Add one more item, which should evict the oldest
    cache.set(np.array([5.0]), "value5")
    assert cache.get(np.array([0.0])) is None
    for i in range(1, 6):
        assert cache.get(np.array([float(i)])) == f"value{i}"

    # Overwriting a key never evicts
    cache.set(np.array([5.0]), "again")
    assert len(cache) == 5
    assert cache.get(np.array([1.0])) == "value1"


def test_cache_clear(cache):
    """Test cache clear functionality."""
    cache.set(np.array([1.0]), "value1")
    cache.set(np.array([2.0]), "value2")

    cache.clear()

    assert len(cache) == 0
    assert cache.get(np.array([1.0])) is None


def test_cache_stats(cache):
    """Test cache statistics."""
    cache.set(np.array([1.0]), "value1")
    cache.set(np.array([2.0]), "value2")

    # Hits
    cache.get(np.array([1.0]))
    cache.get(np.array([2.0]))

    # Miss
    cache.get(np.array([3.0]))

    stats = cache.get_stats()
    assert stats["size"] == 2
    assert stats["max_size"] == 5
    assert stats["hits"] == 2
    assert stats["misses"] == 1
    assert stats["hit_rate"] == 2 / 3


def test_empty_cache_stats(cache):
    """Test statistics before any lookup."""
    assert cache.get_stats()["hit_rate"] == 0
