"""
Report files for a result bundle.

Every report is a CSV over the scheduling intervals, plus a plain-text
summary with the valley-filling and anti-phase metrics.
"""

from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from src.logging_setup import logger
from src.pipeline.schemas import ResultBundle

FLOAT_FORMAT = "%.12g"

SCHEDULE_COLUMNS = {
    "p": "p_kw",
    "y": "y_kw",
    "k": "k_kw",
    "e": "e_kwh",
    "pC": "pC_kw",
    "pDC": "pDC_kw",
}


def _intervals(bundle: ResultBundle, kind: str) -> np.ndarray:
    return np.array([c == kind for c in bundle.interval_classes], dtype=bool)


def _aggregate(bundle: ResultBundle, name: str) -> np.ndarray:
    return np.sum([getattr(s, name) for s in bundle.schedules], axis=0)


def grid_draw(bundle: ResultBundle) -> np.ndarray:
    """Aggregate grid draw sum(p) - sum(k) per interval."""
    if bundle.baseline is not None:
        return np.asarray(bundle.baseline.grid_draw_dr)
    return _aggregate(bundle, "p") - _aggregate(bundle, "k")


def valley_filling(bundle: ResultBundle) -> Optional[float]:
    """Mean extra grid draw over rebound intervals against the no-request baseline.

    Returns None when the bundle has no baseline or no rebound interval.
    """
    rebound = _intervals(bundle, "rebound")
    if bundle.baseline is None or not rebound.any():
        return None
    extra = grid_draw(bundle) - np.asarray(bundle.baseline.grid_draw_baseline)
    return float(extra[rebound].mean())


def anti_phase(bundle: ResultBundle) -> Optional[float]:
    """Sample correlation of alpha and the price over response intervals."""
    response = _intervals(bundle, "response")
    alpha = pd.Series(bundle.leader.alpha)[response]
    price = pd.Series(bundle.leader.price)[response]
    corr = alpha.corr(price)
    return None if pd.isna(corr) else float(corr)


def _write(frame: pd.DataFrame, path: Path) -> Path:
    numeric = frame.select_dtypes("number").columns
    frame[numeric] = frame[numeric] + 0.0  # no "-0" in the output
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else FLOAT_FORMAT % value


def emit_report(bundle: ResultBundle, out: Union[str, Path]) -> List[Path]:
    """
    Write the report files of a bundle.

    Args:
        bundle: Result bundle
        out: Output directory, created if missing

    Returns:
        Paths of the written files
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    taus = np.arange(bundle.T)
    written = []

    schedule = pd.concat(
        [
            pd.DataFrame(
                {
                    "tau": taus,
                    "prosumer_id": s.prosumer_id,
                    **{col: getattr(s, name) for name, col in SCHEDULE_COLUMNS.items()},
                }
            )
            for s in bundle.schedules
        ],
        ignore_index=True,
    )
    written.append(_write(schedule, out / "schedule.csv"))

    flexibility = pd.DataFrame(
        {
            "tau": taus,
            "class": bundle.interval_classes,
            "r_kw": bundle.r,
            "y_total_kw": _aggregate(bundle, "y"),
            "k_total_kw": _aggregate(bundle, "k"),
        }
    )
    written.append(_write(flexibility, out / "flexibility.csv"))

    baseline = (
        bundle.baseline.grid_draw_baseline if bundle.baseline is not None else [np.nan] * bundle.T
    )
    draw = pd.DataFrame(
        {"tau": taus, "draw_dr_kw": grid_draw(bundle), "draw_baseline_kw": baseline}
    )
    written.append(_write(draw, out / "grid_draw.csv"))

    pricing = pd.DataFrame(
        {
            "tau": taus,
            "c0": bundle.leader.c0,
            "alpha": bundle.leader.alpha,
            "price": bundle.leader.price,
        }
    )
    written.append(_write(pricing, out / "pricing.csv"))

    cert = bundle.certificate
    lines = [
        f"mode: {bundle.mode.value}",
        f"prosumers: {len(bundle.schedules)}",
        f"intervals: {bundle.T}",
        f"J_dso: {_fmt(bundle.costs.J_dso)}",
        f"J_followers: {', '.join(_fmt(v) for v in bundle.costs.J_followers)}",
        f"energy_revenue: {_fmt(bundle.costs.energy_revenue)}",
        f"dr_reward_kept: {_fmt(bundle.costs.dr_reward_kept)}",
        f"rebound_reward: {_fmt(bundle.costs.rebound_reward)}",
        f"valley_filling: {_fmt(valley_filling(bundle))}",
        f"anti_phase_correlation: {_fmt(anti_phase(bundle))}",
        f"certificate: {'pass' if cert.passed else 'fail'}",
        f"certificate_worst_improvement: {_fmt(cert.worst_improvement)}",
        f"coupling_residual: {_fmt(bundle.residuals.coupling)}",
    ]
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(summary)

    logger.info("Report written", out=str(out), files=len(written))
    return written
