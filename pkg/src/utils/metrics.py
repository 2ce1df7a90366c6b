"""
Prometheus metrics for the market solver.

This module provides Prometheus metrics for monitoring follower solves and the
leader search. Metrics are process-local and never written into result files.
"""

from pathlib import Path
from typing import Union

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

# Follower equilibrium metrics
VGNE_SOLVES = Counter(
    "vgne_solve_total",
    "Total number of follower equilibrium solves",
    ["method", "status"],
)

VGNE_LATENCY = Histogram(
    "vgne_solve_latency_seconds",
    "Follower equilibrium solve latency in seconds",
    ["method"],
    buckets=(0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0),
)

LEMKE_PIVOTS = Histogram(
    "lemke_pivots",
    "Complementary pivots per Lemke solve",
    buckets=(1, 10, 50, 100, 250, 500, 1000, 2500, 5000, 10000, 20000),
)

# Leader search metrics
LEADER_EVALUATIONS = Counter(
    "leader_evaluation_total",
    "Leader objective evaluations",
    ["source"],  # search, grid, certificate
)

CACHE_LOOKUPS = Counter(
    "leader_cache_lookup_total",
    "Solution cache lookups",
    ["result"],  # hit, miss
)

SEARCH_ITERATIONS = Counter(
    "pattern_search_iterations_total",
    "Pattern search polling iterations",
)

SEARCH_INCUMBENT = Gauge(
    "pattern_search_incumbent_cost",
    "Best leader cost found by the most recent search",
)

CERTIFICATES = Counter(
    "lse_certificate_total",
    "Local optimality certificates issued",
    ["outcome"],  # pass, fail
)


def dump_metrics(path: Union[str, Path]) -> None:
    """Write the default registry in text exposition format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)
