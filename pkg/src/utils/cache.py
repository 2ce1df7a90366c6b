"""
Cache module for the market solver.

This module provides a bounded in-memory cache of follower solutions keyed by
the exact leader decision.
"""

from collections import OrderedDict
from typing import Dict, Generic, Optional, TypeVar, Union

import numpy as np

from src.logging_setup import logger
from src.utils.metrics import CACHE_LOOKUPS

V = TypeVar("V")


def leader_key(z0: np.ndarray) -> bytes:
    """Cache key: the exact bytes of the leader vector."""
    return np.ascontiguousarray(z0, dtype=np.float64).tobytes()


class SolutionCache(Generic[V]):
    """Bounded cache with insertion-order eviction."""

    def __init__(self, max_size: int = 100000):
        """
        Initialize the cache.

        Args:
            max_size: Maximum number of items in the cache
        """
        self.max_size = max_size
        self.cache: "OrderedDict[bytes, V]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, z0: np.ndarray) -> Optional[V]:
        """
        Get a value from the cache.

        Args:
            z0: Leader decision vector

        Returns:
            Cached value or None if not found
        """
        value = self.cache.get(leader_key(z0))
        if value is None:
            self.misses += 1
            CACHE_LOOKUPS.labels(result="miss").inc()
        else:
            self.hits += 1
            CACHE_LOOKUPS.labels(result="hit").inc()
        return value

    def set(self, z0: np.ndarray, value: V) -> None:
        """
        Set a value in the cache.

        Args:
            z0: Leader decision vector
            value: Value to cache
        """
        key = leader_key(z0)
        if key not in self.cache and len(self.cache) >= self.max_size:
            self.cache.popitem(last=False)
        self.cache[key] = value

    def clear(self) -> None:
        """Clear the cache."""
        self.cache.clear()
        logger.debug("Solution cache cleared")

    def __len__(self) -> int:
        return len(self.cache)

    def get_stats(self) -> Dict[str, Union[int, float]]:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache statistics
        """
        total = self.hits + self.misses
        hit_rate = self.hits / total if total > 0 else 0

        return {
            "size": len(self.cache),
            "max_size": self.max_size,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": hit_rate,
        }
