"""
Day-ahead pipeline: load, assemble, solve, certify, write.
"""

from pathlib import Path
from typing import Optional

import numpy as np

from src.logging_setup import logger
from src.models.assembler import AssembledGame, assemble, export_bigm, slater_probe
from src.models.market import (
    BLOCKS,
    K,
    P,
    Scenario,
    build_ledger,
    classify_intervals,
    collective,
    constraint_residuals,
    eval_price,
)
from src.models.mpec import EquilibriumResult, GridResult, grid_oracle, solve_lse
from src.pipeline.loader import load_scenario
from src.pipeline.report import emit_report
from src.pipeline.schemas import (
    BaselineBlock,
    CertificateBlock,
    CostSummary,
    LeaderBlock,
    OracleBlock,
    ProsumerSchedule,
    ResidualBlock,
    ResultBundle,
    RunConfig,
    RunMode,
    TracePoint,
    write_bundle,
)


def baseline_scenario(scen: Scenario) -> Scenario:
    """The same market without a flexibility request."""
    return scen.model_copy(update={"r": [0.0] * scen.T})


def _solve(game: AssembledGame, config: RunConfig, initial_points=None) -> EquilibriumResult:
    probe = slater_probe(game)
    logger.info("Collective feasible set", slack=probe.slack, slater=probe.success)
    return solve_lse(
        game,
        opts=config.search_config(),
        solver_opts=config.solver_config(),
        initial_points=initial_points,
    )


def build_bundle(
    mode: RunMode,
    scen: Scenario,
    result: EquilibriumResult,
    baseline: Optional[EquilibriumResult] = None,
    oracle: Optional[GridResult] = None,
    resolution: int = 0,
    grid_points: int = 0,
) -> ResultBundle:
    """
    Collect a solved outcome into a result bundle.

    Args:
        mode: Run mode the bundle is tagged with
        scen: Scenario the result was solved on
        result: Equilibrium found by the leader search
        baseline: Equilibrium of the same market with r = 0
        oracle: Grid oracle outcome, if one was run
        resolution: Grid resolution of the oracle
        grid_points: Number of grid points the oracle evaluated

    Returns:
        Result bundle
    """
    z0 = result.z0_star.to_vector()
    xs = collective(result.x_star, scen)
    draw = xs[:, P, :].sum(axis=0)
    ledger = build_ledger(z0, result.x_star, scen)
    report = constraint_residuals(result.x_star, scen)
    sol = result.solution

    schedules = [
        ProsumerSchedule(
            prosumer_id=spec.prosumer_id,
            **{name: xs[i, b, :].tolist() for b, name in enumerate(BLOCKS) if name != "t"},
        )
        for i, spec in enumerate(scen.prosumers)
    ]

    baseline_block = None
    if baseline is not None:
        xb = collective(baseline.x_star, baseline_scenario(scen))
        baseline_block = BaselineBlock(
            grid_draw_dr=(draw - xs[:, K, :].sum(axis=0)).tolist(),
            grid_draw_baseline=xb[:, P, :].sum(axis=0).tolist(),
            c0_baseline=list(baseline.z0_star.c0),
            J_dso_baseline=baseline.J_dso,
        )

    oracle_block = None
    if oracle is not None:
        oracle_block = OracleBlock(
            resolution=resolution,
            points=grid_points,
            best_cost=oracle.best_cost,
            best_z0=np.asarray(oracle.best_z0).tolist(),
        )

    return ResultBundle(
        mode=mode,
        T=scen.T,
        dt=scen.dt,
        r=list(scen.r),
        interval_classes=[c.value for c in classify_intervals(scen)],
        schedules=schedules,
        leader=LeaderBlock(
            c0=list(result.z0_star.c0),
            alpha=list(result.z0_star.alpha),
            price=eval_price(draw, scen, z0).tolist(),
        ),
        ledger=ledger,
        costs=CostSummary(
            J_dso=result.J_dso,
            J_followers=list(result.J_followers),
            energy_revenue=float(np.sum(ledger.energy_revenue)),
            dr_reward_kept=float(np.sum(ledger.dso_net)),
            rebound_reward=float(np.sum(ledger.pi_B)),
        ),
        certificate=CertificateBlock(**result.certificate.as_dict()),
        residuals=ResidualBlock(
            stationarity=sol.stat_residual,
            complementarity=sol.comp_residual,
            feasibility=sol.feas_residual,
            coupling=max(max(report.coupling), max(report.rebound_cap), 0.0),
        ),
        baseline=baseline_block,
        oracle=oracle_block,
        trace=[TracePoint(start=e.start, cost=e.cost) for e in result.trace],
        search=list(result.diagnostics),
    )


def run_dayahead(config: RunConfig) -> ResultBundle:
    """
    Run the day-ahead pipeline and write bundle.json plus the report files.

    Args:
        config: Run configuration; mode is solve, baseline or oracle

    Returns:
        The written result bundle

    Raises:
        ScenarioParseError, ScenarioValidationError: On bad input files
        SolverError: If the followers' game or the leader search fails
        EnumerationGuardError: If the oracle grid is too large
    """
    if config.mode not in (RunMode.SOLVE, RunMode.BASELINE, RunMode.ORACLE):
        valid_modes = ["solve", "baseline", "oracle"]
        raise ValueError(f"Invalid run mode: {config.mode.value}. Must be one of {valid_modes}")
    scen = load_scenario(config.scenario, config.profiles, config.request)
    logger.info("Day-ahead run", mode=config.mode.value, seed=config.seed, starts=config.starts)

    if config.mode == RunMode.BASELINE:
        base = baseline_scenario(scen)
        result = _solve(assemble(base), config)
        bundle = build_bundle(RunMode.BASELINE, base, result)
    elif config.mode == RunMode.ORACLE:
        game = assemble(scen)
        search = config.search_config()
        grid = grid_oracle(game, config.grid_resolution, search, config.solver_config())
        result = _solve(game, config, initial_points=[grid.best_z0])
        bundle = build_bundle(
            RunMode.ORACLE,
            scen,
            result,
            oracle=grid,
            resolution=config.grid_resolution,
            grid_points=len(grid.trace),
        )
    else:
        result = _solve(assemble(scen), config)
        baseline = _solve(assemble(baseline_scenario(scen)), config)
        bundle = build_bundle(RunMode.SOLVE, scen, result, baseline=baseline)

    write_bundle(bundle, config.out)
    emit_report(bundle, config.out)
    logger.info(
        "Day-ahead run finished",
        out=str(config.out),
        J_dso=bundle.costs.J_dso,
        certified=bundle.certificate.passed,
    )
    return bundle


def run_export(config: RunConfig) -> Path:
    """Write the big-M single-level model of the scenario to bigm.mps."""
    scen = load_scenario(config.scenario, config.profiles, config.request)
    config.out.mkdir(parents=True, exist_ok=True)
    return export_bigm(assemble(scen), config.out / "bigm.mps")
