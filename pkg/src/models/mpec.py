"""
Leader layer of the Stackelberg game.

The leader problem is solved in implicit form: a derivative-free compass
search over the leader box Gamma, where every evaluation solves the followers'
equilibrium exactly. Results carry a sampled local-optimality certificate; a
brute-force grid over Gamma serves as a verification oracle.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SearchConfig, SolverConfig, settings
from src.exceptions import EnumerationGuardError, SearchFailedError, SolverError
from src.logging_setup import logger
from src.models.assembler import AssembledGame
from src.models.market import N_BLOCKS, LeaderDecision, eval_prosumer_cost, leader_vector
from src.models.vgne import VgneSolution, solve_vgne
from src.utils.cache import SolutionCache
from src.utils.metrics import (
    CERTIFICATES,
    LEADER_EVALUATIONS,
    SEARCH_INCUMBENT,
    SEARCH_ITERATIONS,
)
from src.utils.sampling import ball_in_box

# Points evaluated in one warm-started chain by the grid oracle
GRID_CHAIN = 64


@dataclass(frozen=True)
class Certificate:
    """Sampled local-optimality check around a leader decision."""

    radius: float
    samples: int
    evaluated: int
    failures: int
    worst_improvement: float
    tol_improve: float
    best_point: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return self.worst_improvement >= -self.tol_improve

    def as_dict(self) -> Dict[str, Any]:
        return {
            "radius": self.radius,
            "samples": self.samples,
            "evaluated": self.evaluated,
            "failures": self.failures,
            "worst_improvement": self.worst_improvement,
            "tol_improve": self.tol_improve,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class TraceEntry:
    start: int
    z0: Tuple[float, ...]
    cost: float


@dataclass(frozen=True)
class EquilibriumResult:
    """A certified local Stackelberg equilibrium."""

    z0_star: LeaderDecision
    x_star: np.ndarray
    duals: Tuple[np.ndarray, np.ndarray]
    J_dso: float
    J_followers: List[float]
    certificate: Certificate
    trace: List[TraceEntry]
    solution: VgneSolution
    diagnostics: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(frozen=True)
class GridResult:
    best_z0: np.ndarray
    best_cost: float
    best_solution: Optional[VgneSolution]
    trace: List[Tuple[Tuple[float, ...], float]]


class LeaderObjective:
    """Leader cost as a function of z0, with the followers' response solved exactly.

    Each instance owns a cache and warm-starts every solve from the previous
    one, so one instance must not be shared between concurrent searches.
    """

    def __init__(
        self,
        game: AssembledGame,
        opts: Optional[SolverConfig] = None,
        source: str = "search",
        warm: Optional[VgneSolution] = None,
        max_cache: int = 100000,
    ):
        self.game = game
        self.opts = opts or settings.solver
        self.source = source
        self.cache: SolutionCache[Tuple[float, VgneSolution]] = SolutionCache(max_cache)
        self.last = warm
        self.evaluations = 0

    def __call__(self, z0) -> Tuple[float, VgneSolution]:
        z = leader_vector(z0)
        hit = self.cache.get(z)
        if hit is not None:
            return hit
        sol = solve_vgne(self.game, z, self.opts, warm=self.last)
        cost = self.game.leader_cost(z, sol.x)
        self.evaluations += 1
        LEADER_EVALUATIONS.labels(source=self.source).inc()
        self.last = sol
        self.cache.set(z, (cost, sol))
        return cost, sol


def _key(z: np.ndarray) -> Tuple[float, ...]:
    return tuple(float(v) for v in z)


def leader_objective(
    z0, game: AssembledGame, opts: Optional[SolverConfig] = None
) -> Tuple[float, VgneSolution]:
    """J_DSO(z0, x(z0)) with x(z0) the followers' equilibrium."""
    return LeaderObjective(game, opts)(z0)


def _pmap(fn: Callable, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def active_coordinates(game: AssembledGame) -> np.ndarray:
    """Leader coordinates that can change the leader cost."""
    width = game.leader_hi - game.leader_lo
    r = np.asarray(game.scenario.r, dtype=float)
    live = np.concatenate([np.ones(game.T, dtype=bool), r > 0])
    return np.flatnonzero(live & (width > 0))


def starting_points(
    game: AssembledGame, opts: SearchConfig, extra: Optional[Iterable] = None
) -> List[np.ndarray]:
    """Midpoint, then quarter/three-quarter stencil vertices on random coordinate subsets."""
    lo, hi = game.leader_lo, game.leader_hi
    width = hi - lo
    mid = lo + 0.5 * width
    active = active_coordinates(game)
    rng = np.random.default_rng(opts.seed)
    points = [mid]
    while len(points) < opts.starts:
        point = mid.copy()
        if len(active):
            chosen = active[rng.random(len(active)) < 0.5]
            if len(chosen) == 0:
                chosen = active[[rng.integers(len(active))]]
            share = np.where(rng.random(len(chosen)) < 0.5, 0.25, 0.75)
            point[chosen] = lo[chosen] + share * width[chosen]
        points.append(point)
    for z in extra or []:
        points.append(np.clip(leader_vector(z), lo, hi))
    return points


def _pattern_search(
    objective: LeaderObjective,
    z_start: np.ndarray,
    opts: SearchConfig,
    mesh: float,
    active: np.ndarray,
) -> Tuple[np.ndarray, float, VgneSolution, List[Tuple[np.ndarray, float]]]:
    """Compass search with opportunistic polling; returns the incumbent and its history."""
    game = objective.game
    lo, hi = game.leader_lo, game.leader_hi
    width = hi - lo
    z = np.clip(z_start, lo, hi)
    f, sol = objective(z)
    history = [(z.copy(), f)]
    span = width[active].max(initial=0.0)
    while mesh * span >= opts.mesh_tol and objective.evaluations < opts.max_evaluations:
        SEARCH_ITERATIONS.inc()
        improved = False
        for coord in active:
            for direction in (1.0, -1.0):
                cand = z.copy()
                step = direction * mesh * width[coord]
                cand[coord] = np.clip(z[coord] + step, lo[coord], hi[coord])
                if cand[coord] == z[coord]:
                    continue
                try:
                    f_cand, sol_cand = objective(cand)
                except SolverError as exc:
                    logger.debug("Leader candidate rejected", error=str(exc))
                    continue
                if f_cand < f:
                    z, f, sol = cand, f_cand, sol_cand
                    history.append((z.copy(), f))
                    improved = True
                    break
            if improved:
                break
        mesh = min(mesh * opts.expansion, 1.0) if improved else mesh * opts.contraction
    return z, f, sol, history


def certify_lse(
    game: AssembledGame,
    z0,
    x: np.ndarray,
    radius: Optional[float] = None,
    samples: Optional[int] = None,
    opts: Optional[SearchConfig] = None,
    solver_opts: Optional[SolverConfig] = None,
    seed: Optional[int] = None,
    warm: Optional[VgneSolution] = None,
) -> Certificate:
    """Sample the radius-ball around z0 within Gamma and record the best cost improvement.

    The certificate passes when no sampled leader decision lowers the leader
    cost by more than tol_improve.
    """
    opts = opts or settings.search
    radius = opts.cert_radius if radius is None else radius
    samples = opts.cert_samples if samples is None else samples
    seed = opts.seed if seed is None else seed
    z = leader_vector(z0)
    base = game.leader_cost(z, np.asarray(x, dtype=float))

    if radius <= 0 or samples <= 0:
        cert = Certificate(radius, samples, 0, 0, 0.0, opts.tol_improve)
        CERTIFICATES.labels(outcome="pass").inc()
        return cert

    rng = np.random.default_rng(seed)
    points = ball_in_box(z, radius, game.leader_lo, game.leader_hi, samples, rng)

    def evaluate(point: np.ndarray) -> Optional[float]:
        try:
            sol = solve_vgne(game, point, solver_opts, warm=warm)
        except SolverError:
            return None
        LEADER_EVALUATIONS.labels(source="certificate").inc()
        return game.leader_cost(point, sol.x)

    costs = _pmap(evaluate, list(points), opts.workers)
    deltas = np.array([np.inf if c is None else c - base for c in costs])
    failures = int(sum(c is None for c in costs))
    evaluated = samples - failures
    worst = float(deltas.min()) if evaluated else 0.0
    best_point = points[int(np.argmin(deltas))] if evaluated else None
    cert = Certificate(
        radius=radius,
        samples=samples,
        evaluated=evaluated,
        failures=failures,
        worst_improvement=worst,
        tol_improve=opts.tol_improve,
        best_point=best_point,
    )
    CERTIFICATES.labels(outcome="pass" if cert.passed else "fail").inc()
    logger.info(
        "Local optimality certificate",
        radius=radius,
        samples=samples,
        failures=failures,
        worst_improvement=worst,
        passed=cert.passed,
    )
    return cert


def follower_costs(game: AssembledGame, z0, x: np.ndarray) -> List[float]:
    scen = game.scenario
    xs = np.asarray(x, dtype=float).reshape(game.N, N_BLOCKS * game.T)
    return [
        eval_prosumer_cost(i, xs[i], np.delete(xs, i, axis=0), z0, scen)
        for i in range(game.N)
    ]


def solve_lse(
    game: AssembledGame,
    opts: Optional[SearchConfig] = None,
    solver_opts: Optional[SolverConfig] = None,
    initial_points: Optional[Iterable] = None,
) -> EquilibriumResult:
    """Multi-start pattern search for a local Stackelberg equilibrium.

    Args:
        game: Assembled game
        opts: Search options, defaults to settings.search
        solver_opts: Follower solver options, defaults to settings.solver
        initial_points: Extra starting points, e.g. a grid-oracle minimizer

    Returns:
        Best point found with its certificate

    Raises:
        SearchFailedError: If every start failed
    """
    opts = opts or settings.search
    solver_opts = solver_opts or settings.solver
    active = active_coordinates(game)
    starts = starting_points(game, opts, initial_points)

    def run(index: int):
        objective = LeaderObjective(game, solver_opts)
        try:
            z, f, sol, history = _pattern_search(
                objective, starts[index], opts, opts.initial_mesh, active
            )
        except SolverError as exc:
            return index, None, {"start": index, "status": "failed", "error": str(exc)}
        diag = {
            "start": index,
            "status": "ok",
            "cost": f,
            "evaluations": objective.evaluations,
            "cache": objective.cache.get_stats(),
        }
        return index, (z, f, sol, history), diag

    outcomes = _pmap(run, list(range(len(starts))), opts.workers)
    diagnostics = [diag for _, _, diag in outcomes]
    trace: List[TraceEntry] = []
    best = None
    for index, found, _ in outcomes:
        if found is None:
            continue
        for z, f in found[3]:
            if best is None or f < best[1]:
                trace.append(TraceEntry(index, _key(z), float(f)))
                best = (z, f, found[2])
        logger.debug("Search start finished", start=index, cost=found[1])
    if best is None:
        raise SearchFailedError(diagnostics)

    z_best, f_best, sol_best = best
    span = (game.leader_hi - game.leader_lo)[active].max(initial=0.0)
    cert = certify_lse(game, z_best, sol_best.x, opts=opts, solver_opts=solver_opts, warm=sol_best)
    for round_ in range(1, opts.cert_rounds + 1):
        if cert.passed or cert.best_point is None:
            break
        objective = LeaderObjective(game, solver_opts, warm=sol_best)
        mesh = opts.cert_radius / span if span > 0 else opts.initial_mesh
        try:
            z, f, sol, history = _pattern_search(objective, cert.best_point, opts, mesh, active)
        except SolverError as exc:
            logger.warning("Certificate restart failed", round=round_, error=str(exc))
            break
        if f >= f_best:
            break
        for z_h, f_h in history:
            if f_h < f_best:
                trace.append(TraceEntry(len(starts) + round_ - 1, _key(z_h), float(f_h)))
                f_best = f_h
        z_best, f_best, sol_best = z, f, sol
        logger.info("Certificate-driven restart", round=round_, cost=f_best)
        cert = certify_lse(
            game,
            z_best,
            sol_best.x,
            opts=opts,
            solver_opts=solver_opts,
            seed=opts.seed + round_,
            warm=sol_best,
        )

    SEARCH_INCUMBENT.set(f_best)
    logger.info("Leader search finished", cost=f_best, starts=len(starts), certified=cert.passed)
    return EquilibriumResult(
        z0_star=LeaderDecision.from_vector(z_best),
        x_star=sol_best.x,
        duals=(sol_best.lam, sol_best.lam_local),
        J_dso=float(f_best),
        J_followers=follower_costs(game, z_best, sol_best.x),
        certificate=cert,
        trace=trace,
        solution=sol_best,
        diagnostics=diagnostics,
    )


def grid_axes(game: AssembledGame, resolution: int) -> List[np.ndarray]:
    """Grid values per leader coordinate; inert and fixed coordinates sit at their midpoint."""
    lo, hi = game.leader_lo, game.leader_hi
    active = set(active_coordinates(game).tolist())
    axes = []
    for k in range(game.n_leader):
        if resolution == 1 or k not in active:
            axes.append(np.array([0.5 * (lo[k] + hi[k])]))
        else:
            axes.append(np.linspace(lo[k], hi[k], resolution))
    return axes


def grid_oracle(
    game: AssembledGame,
    resolution: Optional[int] = None,
    opts: Optional[SearchConfig] = None,
    solver_opts: Optional[SolverConfig] = None,
) -> GridResult:
    """Exhaustive leader grid with an exact follower solve at every point.

    Raises:
        EnumerationGuardError: If the grid exceeds grid_max_points
    """
    opts = opts or settings.search
    resolution = resolution or opts.grid_resolution
    axes = grid_axes(game, resolution)
    total = int(np.prod([len(a) for a in axes], dtype=object))
    if total > opts.grid_max_points:
        raise EnumerationGuardError(total, opts.grid_max_points)

    points = [np.array(p) for p in itertools.product(*axes)]
    chains = [points[k : k + GRID_CHAIN] for k in range(0, len(points), GRID_CHAIN)]

    def run(chain: List[np.ndarray]):
        objective = LeaderObjective(game, solver_opts, source="grid")
        out = []
        for point in chain:
            try:
                cost, sol = objective(point)
            except SolverError:
                cost, sol = np.inf, None
            out.append((point, cost, sol))
        return out

    results = [item for chunk in _pmap(run, chains, opts.workers) for item in chunk]
    trace = [(_key(p), float(c)) for p, c, _ in results]
    best_index = int(np.argmin([c for _, c, _ in results]))
    best_point, best_cost, best_sol = results[best_index]
    logger.info("Grid oracle finished", points=total, best_cost=best_cost)
    return GridResult(
        best_z0=best_point, best_cost=float(best_cost), best_solution=best_sol, trace=trace
    )
