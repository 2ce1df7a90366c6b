"""
Tests for the Prometheus metrics.

This module contains tests for the Prometheus metrics implementation.
"""

import numpy as np
from prometheus_client import REGISTRY

from src.models.assembler import assemble
from src.models.vgne import solve_vgne
from src.utils.metrics import (
    CACHE_LOOKUPS,
    CERTIFICATES,
    LEADER_EVALUATIONS,
    SEARCH_INCUMBENT,
    dump_metrics,
)
from tests.conftest import build_scenario


def _sample(name, labels=None):
    return REGISTRY.get_sample_value(name, labels or {}) or 0.0


def test_solver_metrics(flat_scenario):
    """Test that a follower solve is counted and timed."""
    before = _sample("vgne_solve_total", {"method": "lemke", "status": "ok"})
    solve_vgne(assemble(flat_scenario), np.array([2.0, 0.5]))
    after = _sample("vgne_solve_total", {"method": "lemke", "status": "ok"})
    assert after == before + 1
    assert _sample("vgne_solve_latency_seconds_count", {"method": "lemke"}) >= 1
    assert _sample("lemke_pivots_count") >= 1


def test_search_metrics():
    """Test leader search metrics."""
    LEADER_EVALUATIONS.labels(source="grid").inc()
    CERTIFICATES.labels(outcome="fail").inc()
    CACHE_LOOKUPS.labels(result="hit").inc()
    SEARCH_INCUMBENT.set(-12.5)

    assert _sample("leader_evaluation_total", {"source": "grid"}) > 0
    assert _sample("lse_certificate_total", {"outcome": "fail"}) > 0
    assert _sample("leader_cache_lookup_total", {"result": "hit"}) > 0
    assert REGISTRY.get_sample_value("pattern_search_incumbent_cost") == -12.5


def test_dump_metrics(tmp_path):
    """Test the text exposition file."""
    solve_vgne(assemble(build_scenario(N=1, T=1, storage=False)), np.array([2.0, 0.5]))
    path = tmp_path / "metrics" / "solver.prom"
    dump_metrics(path)
    text = path.read_text()
    assert "vgne_solve_total{" in text
    assert "lse_certificate_total" in text
