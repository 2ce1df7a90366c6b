"""
Tests for the day-ahead pipeline and its report files.
"""

import warnings

import numpy as np
import pandas as pd
import pytest

from src.pipeline.loader import write_scenario
from src.pipeline.report import anti_phase, emit_report, valley_filling
from src.pipeline.runner import baseline_scenario, run_dayahead, run_export
from src.pipeline.schemas import RunConfig, RunMode, load_bundle
from src.utils.mps import read_mps


@pytest.fixture
def scenario_dir(tmp_path, scenario):
    write_scenario(scenario, tmp_path / "scen")
    return tmp_path / "scen"


def _config(scenario_dir, out, **overrides):
    values = dict(scenario=scenario_dir, out=out, starts=2, seed=1)
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def solved(scenario_dir, tmp_path):
    out = tmp_path / "out"
    return run_dayahead(_config(scenario_dir, out)), out


def test_baseline_scenario(scenario):
    """Test that the baseline keeps everything but the request."""
    base = baseline_scenario(scenario)
    assert base.r == [0.0, 0.0]
    assert base.prosumers == scenario.prosumers
    assert base.c0_hi == scenario.c0_hi


def test_solve_bundle(solved, scenario):
    """Test the contents of a solve-mode bundle."""
    bundle, out = solved
    assert bundle.mode == RunMode.SOLVE
    assert bundle.interval_classes == ["response", "rebound"]
    assert [s.prosumer_id for s in bundle.schedules] == ["b1", "b2"]
    assert bundle.certificate.passed
    assert bundle.residuals.coupling <= 1e-6
    assert bundle.baseline is not None
    assert bundle.oracle is None
    assert len(bundle.costs.J_followers) == 2
    assert bundle.trace
    np.testing.assert_allclose(np.sum(bundle.ledger.phi, axis=0), bundle.ledger.pi_R, atol=1e-9)

    p = np.sum([s.p for s in bundle.schedules], axis=0)
    np.testing.assert_allclose(
        bundle.leader.price, np.asarray(scenario.c1) * p + np.asarray(bundle.leader.c0)
    )


def test_bundle_file_round_trip(solved):
    """Test that bundle.json loads back with rounded values."""
    bundle, out = solved
    loaded = load_bundle(out / "bundle.json")
    assert loaded.mode == bundle.mode
    assert loaded.costs.J_dso == pytest.approx(bundle.costs.J_dso, rel=1e-11)
    assert loaded.leader.c0 == pytest.approx(bundle.leader.c0, rel=1e-11)


def test_report_files(solved):
    """Test the CSV reports and the summary."""
    bundle, out = solved
    schedule = pd.read_csv(out / "schedule.csv")
    assert list(schedule.columns) == [
        "tau",
        "prosumer_id",
        "p_kw",
        "y_kw",
        "k_kw",
        "e_kwh",
        "pC_kw",
        "pDC_kw",
    ]
    assert len(schedule) == 2 * bundle.T

    draw = pd.read_csv(out / "grid_draw.csv")
    assert list(draw.columns) == ["tau", "draw_dr_kw", "draw_baseline_kw"]
    assert len(draw) == bundle.T

    flexibility = pd.read_csv(out / "flexibility.csv")
    assert flexibility["class"].tolist() == ["response", "rebound"]

    pricing = pd.read_csv(out / "pricing.csv")
    assert pricing["c0"].tolist() == pytest.approx(bundle.leader.c0, rel=1e-11)

    summary = dict(
        line.split(": ", 1) for line in (out / "summary.txt").read_text().splitlines()
    )
    assert summary["mode"] == "solve"
    assert summary["certificate"] == "pass"
    assert summary["valley_filling"] != "n/a"
    # One response interval has no sample correlation
    assert summary["anti_phase_correlation"] == "n/a"


def test_report_metrics(solved):
    """Test the valley-filling metric and its undefined cases."""
    bundle, out = solved
    extra = np.asarray(bundle.baseline.grid_draw_dr) - np.asarray(
        bundle.baseline.grid_draw_baseline
    )
    assert valley_filling(bundle) == pytest.approx(extra[1])
    assert valley_filling(bundle.model_copy(update={"baseline": None})) is None
    assert anti_phase(bundle) is None


def test_anti_phase_correlation(solved):
    """Test the correlation of share and price over response intervals."""
    bundle, _ = solved
    wide = bundle.model_copy(
        update={
            "interval_classes": ["response", "response", "response"],
            "leader": bundle.leader.model_copy(
                update={"alpha": [0.2, 0.5, 0.8], "price": [3.0, 2.0, 1.0]}
            ),
        }
    )
    assert anti_phase(wide) == pytest.approx(-1.0)


def test_emit_report_from_loaded_bundle(solved, tmp_path):
    """Test re-emitting reports from a bundle file."""
    _, out = solved
    written = emit_report(load_bundle(out / "bundle.json"), tmp_path / "again")
    assert [p.name for p in written] == [
        "schedule.csv",
        "flexibility.csv",
        "grid_draw.csv",
        "pricing.csv",
        "summary.txt",
    ]
    assert all(p.exists() for p in written)


def test_baseline_mode(scenario_dir, tmp_path):
    """Test a run without the request."""
    bundle = run_dayahead(_config(scenario_dir, tmp_path / "out", mode=RunMode.BASELINE))
    assert bundle.mode == RunMode.BASELINE
    assert bundle.r == [0.0, 0.0]
    assert bundle.interval_classes == ["none", "none"]
    assert bundle.baseline is None
    flex = np.array([s.y + s.k for s in bundle.schedules])
    np.testing.assert_allclose(flex, 0.0, atol=1e-9)


def test_oracle_mode(scenario_dir, tmp_path):
    """Test a grid-seeded run."""
    config = _config(scenario_dir, tmp_path / "out", mode=RunMode.ORACLE, grid_resolution=3)
    bundle = run_dayahead(config)
    assert bundle.oracle is not None
    assert bundle.oracle.points == 27
    assert bundle.oracle.resolution == 3
    assert bundle.costs.J_dso <= bundle.oracle.best_cost + 1e-3


def test_invalid_mode(scenario_dir, tmp_path):
    """Test that only day-ahead modes are accepted."""
    with pytest.raises(ValueError, match="Invalid run mode"):
        run_dayahead(_config(scenario_dir, tmp_path / "out", mode=RunMode.EXPORT))


def test_export(scenario_dir, tmp_path):
    """Test the export run."""
    path = run_export(_config(scenario_dir, tmp_path / "out", mode=RunMode.EXPORT))
    assert path.name == "bigm.mps"
    assert read_mps(path).integer.any()


def test_identical_runs_write_identical_bundles(scenario_dir, tmp_path):
    """Test that a fixed seed reproduces bundle.json byte for byte."""
    run_dayahead(_config(scenario_dir, tmp_path / "a"))
    run_dayahead(_config(scenario_dir, tmp_path / "b"))
    assert (tmp_path / "a" / "bundle.json").read_bytes() == (
        tmp_path / "b" / "bundle.json"
    ).read_bytes()


@pytest.mark.slow
def test_shipped_example(example_dir, tmp_path):
    """Test a full run of the shipped scenario."""
    bundle = run_dayahead(RunConfig(scenario=example_dir, out=tmp_path / "out"))
    assert bundle.certificate.passed
    assert bundle.certificate.worst_improvement >= -1e-6
    assert bundle.residuals.stationarity <= 1e-6
    assert bundle.residuals.coupling <= 1e-8

    classes = np.array(bundle.interval_classes)
    y_total = np.sum([s.y for s in bundle.schedules], axis=0)
    assert (y_total[classes == "response"] > 0).any()

    # Some battery charges across a rebound interval
    rebound = np.flatnonzero(classes == "rebound")
    assert any(
        s.e[tau] > s.e[tau - 1] + 1e-9
        for s in bundle.schedules
        for tau in rebound
        if tau > 0
    )

    assert valley_filling(bundle) >= 0
    corr = anti_phase(bundle)
    if corr is None or corr >= 0:
        warnings.warn(f"incentive share not in anti-phase with the price: {corr}")
