"""
Scenario files for the market solver.

A scenario on disk is three files: ``scenario.json`` (market and storage
parameters, versioned by ``format_version``), ``profiles.csv`` with columns
``tau,prosumer_id,demand_kw,solar_kw`` and ``request.csv`` with ``tau,r_kw``.
Intervals are numbered from 0.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.exceptions import ScenarioParseError, ScenarioValidationError
from src.logging_setup import logger
from src.models.market import Scenario
from src.pipeline.schemas import FORMAT_VERSION, ProsumerFile, ScenarioFile

PROFILE_COLUMNS = ("tau", "prosumer_id", "demand_kw", "solar_kw")
REQUEST_COLUMNS = ("tau", "r_kw")

PathLike = Union[str, Path]


def _location(loc: Sequence) -> str:
    return ".".join(str(part) for part in loc) or "scenario"


def validation_messages(exc: ValidationError) -> List[str]:
    """Flatten a pydantic error into one message per violated invariant."""
    messages = []
    for err in exc.errors():
        inner = (err.get("ctx") or {}).get("error")
        if isinstance(inner, ScenarioValidationError):
            messages.extend(inner.errors)
        else:
            messages.append(f"{_location(err['loc'])}: {err['msg']}")
    return messages


def _read_json(path: Path) -> ScenarioFile:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(path, exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ScenarioParseError(path, "expected a JSON object", 1, 1)
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise ScenarioParseError(
            path, f"unsupported format_version {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        return ScenarioFile.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioValidationError(validation_messages(exc)) from exc


def _cell_float(cell) -> float:
    # Exact for the shortest repr that write_scenario emits
    try:
        return float(cell)
    except (TypeError, ValueError):
        return np.nan


def _read_csv(path: Path, columns: Sequence[str], numeric: Sequence[str]) -> pd.DataFrame:
    """Read a CSV with a fixed header; report the first bad cell by line and column."""
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise ScenarioParseError(path, "file is empty", 1) from exc
    except pd.errors.ParserError as exc:
        raise ScenarioParseError(path, str(exc)) from exc

    header = [c.strip() for c in frame.columns]
    missing = [c for c in columns if c not in header]
    if missing:
        raise ScenarioParseError(path, f"missing columns {missing}, header is {header}", 1)
    frame.columns = header

    for name in numeric:
        values = frame[name].map(_cell_float).astype(float)
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # header is line 1
            raise ScenarioParseError(
                path,
                f"{name}: not a finite number: {frame[name].iloc[row]!r}",
                row + 2,
                header.index(name) + 1,
            )
        frame[name] = values
    return frame


def _taus(frame: pd.DataFrame, T: int, path: Path, what: str) -> List[str]:
    errors = []
    taus = frame["tau"]
    if (taus != taus.round()).any():
        errors.append(f"{path.name}: tau must be an integer")
        return errors
    taus = taus.astype(int)
    outside = sorted(set(taus[(taus < 0) | (taus >= T)]))
    if outside:
        errors.append(f"{path.name}: {what} tau outside 0..{T - 1}: {outside}")
    dup = sorted(set(taus[taus.duplicated()]))
    if dup:
        errors.append(f"{path.name}: {what} repeats tau {dup}")
    gaps = sorted(set(range(T)) - set(taus))
    if gaps:
        errors.append(f"{path.name}: {what} has no row for tau {gaps}")
    return errors


def _broadcast(value, T: int) -> List[float]:
    if isinstance(value, list):
        return [float(v) for v in value]
    return [float(value)] * T


def _profiles(
    frame: pd.DataFrame, prosumers: List[ProsumerFile], T: int, path: Path
) -> Dict[str, Dict[str, List[float]]]:
    errors = []
    known = [p.prosumer_id for p in prosumers]
    unknown = sorted(set(frame["prosumer_id"]) - set(known))
    if unknown:
        errors.append(f"{path.name}: unknown prosumer_id {unknown}")
    profiles = {}
    for pid in known:
        rows = frame[frame["prosumer_id"] == pid]
        problems = _taus(rows, T, path, pid)
        errors.extend(problems)
        if problems:
            continue
        rows = rows.assign(tau=rows["tau"].astype(int)).sort_values("tau")
        profiles[pid] = {
            "d": rows["demand_kw"].astype(float).tolist(),
            "s": rows["solar_kw"].astype(float).tolist(),
        }
    if errors:
        raise ScenarioValidationError(errors)
    return profiles


def load_scenario(
    scenario_path: PathLike,
    profiles_path: Optional[PathLike] = None,
    request_path: Optional[PathLike] = None,
) -> Scenario:
    """
    Load and validate a scenario.

    Args:
        scenario_path: scenario.json, or the directory holding the three files
        profiles_path: profiles.csv, defaults to the sibling of scenario.json
        request_path: request.csv, defaults to the sibling of scenario.json

    Returns:
        Validated scenario

    Raises:
        ScenarioParseError: If a file cannot be parsed
        ScenarioValidationError: If the data violate a model invariant
    """
    scenario_path = Path(scenario_path)
    if scenario_path.is_dir():
        scenario_path = scenario_path / "scenario.json"
    base = scenario_path.parent
    profiles_path = Path(profiles_path) if profiles_path else base / "profiles.csv"
    request_path = Path(request_path) if request_path else base / "request.csv"
    for path in (scenario_path, profiles_path, request_path):
        if not path.is_file():
            raise ScenarioParseError(path, "file not found")

    spec = _read_json(scenario_path)
    if spec.T < 1:
        raise ScenarioValidationError([f"T: must be at least 1, got {spec.T}"])
    if len({p.prosumer_id for p in spec.prosumers}) != len(spec.prosumers):
        raise ScenarioValidationError(["prosumers: prosumer_id values must be unique"])
    T = spec.T

    profiles = _read_csv(profiles_path, PROFILE_COLUMNS, ("tau", "demand_kw", "solar_kw"))
    profiles["prosumer_id"] = profiles["prosumer_id"].str.strip()
    series = _profiles(profiles, spec.prosumers, T, profiles_path)

    request = _read_csv(request_path, REQUEST_COLUMNS, ("tau", "r_kw"))
    errors = _taus(request, T, request_path, "request")
    if errors:
        raise ScenarioValidationError(errors)
    request = request.assign(tau=request["tau"].astype(int)).sort_values("tau")

    try:
        scen = Scenario(
            T=T,
            dt=spec.dt,
            r=request["r_kw"].astype(float).tolist(),
            p_bar=spec.p_bar,
            p_tilde=spec.p_tilde,
            beta=spec.beta,
            c1=_broadcast(spec.c1, T),
            c0_lo=_broadcast(spec.c0_lo, T),
            c0_hi=_broadcast(spec.c0_hi, T),
            g=_broadcast(spec.g, T),
            mu=spec.mu,
            delta=spec.delta,
            prosumers=[{**p.model_dump(), **series[p.prosumer_id]} for p in spec.prosumers],
        )
    except ValidationError as exc:
        raise ScenarioValidationError(validation_messages(exc)) from exc

    for note in scen.warnings():
        logger.warning("Scenario soft invariant", note=note, path=str(scenario_path))
    logger.info("Scenario loaded", path=str(scenario_path), N=scen.N, T=scen.T, dt=scen.dt)
    return scen


def write_scenario(scen: Scenario, directory: PathLike, note: str = "") -> Path:
    """
    Write a scenario as scenario.json, profiles.csv and request.csv.

    Args:
        scen: Scenario to write
        directory: Target directory, created if missing
        note: Free text stored in scenario.json

    Returns:
        Path of scenario.json
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = ScenarioFile(
        format_version=FORMAT_VERSION,
        note=note,
        T=scen.T,
        dt=scen.dt,
        p_bar=scen.p_bar,
        p_tilde=scen.p_tilde,
        beta=scen.beta,
        c1=list(scen.c1),
        c0_lo=list(scen.c0_lo),
        c0_hi=list(scen.c0_hi),
        g=list(scen.g),
        mu=scen.mu,
        delta=scen.delta,
        prosumers=[
            ProsumerFile(
                prosumer_id=p.prosumer_id,
                e_max=p.e_max,
                p_max=p.p_max,
                eta_c=p.eta_c,
                eta_dc=p.eta_dc,
                e0=p.e0,
            )
            for p in scen.prosumers
        ],
    )
    path = directory / "scenario.json"
    path.write_text(json.dumps(spec.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")

    rows = [
        (tau, pf.prosumer_id, p.d[tau], p.s[tau])
        for pf, p in zip(spec.prosumers, scen.prosumers)
        for tau in range(scen.T)
    ]
    pd.DataFrame(rows, columns=list(PROFILE_COLUMNS)).to_csv(
        directory / "profiles.csv", index=False
    )
    pd.DataFrame({"tau": range(scen.T), "r_kw": scen.r}).to_csv(
        directory / "request.csv", index=False
    )
    logger.debug("Scenario written", directory=str(directory))
    return path


def generate_request(
    T: int,
    peak: float,
    seed: int = 0,
    share: float = 0.2,
    start_with: str = "response",
) -> List[float]:
    """
    Random block-structured flexibility request.

    Response and rebound blocks of 2 to 4 intervals alternate, separated by
    gaps of 1 to 3 quiet intervals. Magnitudes are drawn up to `share` of
    `peak`.

    Args:
        T: Number of intervals
        peak: Reference load, usually the peak of the aggregate demand
        seed: Random seed
        share: Largest magnitude as a share of peak
        start_with: Kind of the first block, "response" or "rebound"

    Returns:
        Request per interval, positive for response and negative for rebound
    """
    if start_with not in ("response", "rebound"):
        raise ValueError(
            f"Invalid start_with: {start_with}. Must be one of ['response', 'rebound']"
        )
    rng = np.random.default_rng(seed)
    r = np.zeros(T)
    sign = 1.0 if start_with == "response" else -1.0
    tau = int(rng.integers(0, max(1, T // 6) + 1))
    while tau < T:
        end = min(T, tau + int(rng.integers(2, 5)))
        magnitude = rng.uniform(0.25, 1.0) * share * peak
        r[tau:end] = sign * np.floor(magnitude * 1000.0) / 1000.0
        sign = -sign
        tau = end + int(rng.integers(1, 4))
    return r.tolist()
