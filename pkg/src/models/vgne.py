"""
Variational generalized Nash equilibria of the followers' game.

For a leader decision z0 the KKT system of the followers

    (bigQ + 2 eps I) x + C z0 + q + A'lam + F'lam_local + E'nu = 0
    0 <= lam _|_ b - A x >= 0,  0 <= lam_local _|_ f - F x >= 0,  E x = e

shares one multiplier lam across all followers on the coupling rows. It is
reduced to a monotone LCP by eliminating one pivot variable per equality row
and orienting the remaining variables to be nonnegative. Only the constant
term of that LCP depends on z0, so its matrix is built once per game and
Tikhonov weight.
"""

import threading
import time
import weakref
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Sequence

import numpy as np

from src.config import SolverConfig, settings
from src.exceptions import InfeasibleGameError, IterationLimitError, RayTerminationError
from src.logging_setup import logger
from src.models.assembler import AssembledGame, slater_probe
from src.models.market import LeaderLike, leader_vector
from src.utils.lcp import LcpResult, extragradient, lemke, solve_active_set
from src.utils.metrics import LEMKE_PIVOTS, VGNE_LATENCY, VGNE_SOLVES
from src.utils.sampling import hit_and_run


@dataclass(frozen=True)
class VgneSolution:
    """A follower equilibrium with its multipliers and KKT residuals."""

    x: np.ndarray
    lam: np.ndarray
    lam_local: np.ndarray
    nu: np.ndarray
    stat_residual: float
    comp_residual: float
    feas_residual: float
    method: str
    iterations: int
    basis: np.ndarray


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    comp_coupling: np.ndarray
    comp_local: np.ndarray
    nu: np.ndarray

    @property
    def feasibility(self) -> float:
        return max(self.primal, self.dual)

    def passes(self, opts: SolverConfig) -> bool:
        return (
            self.stationarity <= opts.tol_stat
            and self.complementarity <= opts.tol_comp
            and self.feasibility <= opts.tol_feas
        )

    def as_dict(self) -> Dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "dual": self.dual,
            "complementarity": self.complementarity,
        }


@dataclass(frozen=True, eq=False)
class LcpForm:
    """Reduced complementarity form of a game for one Tikhonov weight."""

    game: AssembledGame
    tikhonov: float
    indep: np.ndarray
    dep: np.ndarray
    S: np.ndarray
    s0: np.ndarray
    sign: np.ndarray
    sign_rows: np.ndarray
    local_kept: np.ndarray
    row_scale: np.ndarray
    M: np.ndarray
    h: np.ndarray
    c_base: np.ndarray
    CS: np.ndarray

    @property
    def size(self) -> int:
        return len(self.h) + len(self.indep)

    @cached_property
    def step(self) -> float:
        return 0.9 / max(float(np.linalg.norm(self.M, 2)), 1e-12)

    def q(self, z0: np.ndarray) -> np.ndarray:
        return np.concatenate([self.sign * (self.c_base + self.CS @ z0), self.h])

    def recover(self, z0: np.ndarray, res: LcpResult):
        """Map an LCP solution back to (x, lam, lam_local, nu)."""
        game = self.game
        n_i = len(self.indep)
        u, lam_scaled = res.z[:n_i], res.z[n_i:]
        x = self.S @ (self.sign * u) + self.s0
        lam_rows = self.row_scale * lam_scaled
        m_a = len(game.bcoup)
        lam = lam_rows[:m_a]
        lam_local = np.zeros(len(game.flocal))
        lam_local[self.local_kept] = lam_rows[m_a:]
        lam_local[self.sign_rows] = res.w[:n_i]
        nu = _equality_multipliers(game, z0, x, lam, lam_local, self.tikhonov)
        return x, lam, lam_local, nu


_FORMS: "weakref.WeakKeyDictionary[AssembledGame, Dict[float, LcpForm]]"
_FORMS = weakref.WeakKeyDictionary()
_FORMS_LOCK = threading.Lock()


def lcp_form(game: AssembledGame, tikhonov: float) -> LcpForm:
    """Reduced LCP of a game, memoized per game and Tikhonov weight."""
    with _FORMS_LOCK:
        cached = _FORMS.get(game, {}).get(tikhonov)
    if cached is not None:
        return cached
    form = _build_form(game, tikhonov)
    with _FORMS_LOCK:
        _FORMS.setdefault(game, {})[tikhonov] = form
    return form


def _build_form(game: AssembledGame, tikhonov: float) -> LcpForm:
    n = game.n
    dep = np.asarray(game.eq_pivots, dtype=int)
    indep = np.setdiff1d(np.arange(n), dep)
    n_i = len(indep)

    E_D = game.Eeq[:, dep]
    R = -np.linalg.solve(E_D, game.Eeq[:, indep])
    S = np.zeros((n, n_i))
    S[indep, np.arange(n_i)] = 1.0
    S[dep] = R
    s0 = np.zeros(n)
    s0[dep] = np.linalg.solve(E_D, game.eeq)

    # One sign row per independent variable becomes the LCP bound u >= 0
    F, f = game.Flocal, game.flocal
    position = np.full(n, -1)
    position[indep] = np.arange(n_i)
    sign = np.zeros(n_i)
    sign_rows = np.full(n_i, -1)
    single = np.flatnonzero(((F != 0).sum(axis=1) == 1) & (f == 0))
    for row in single:
        col = int(np.flatnonzero(F[row])[0])
        pos = position[col]
        if pos >= 0 and sign_rows[pos] < 0:
            sign_rows[pos] = row
            sign[pos] = -np.sign(F[row, col])
    if np.any(sign_rows < 0):
        raise ValueError("Every free follower variable needs a sign bound")
    local_kept = np.setdiff1d(np.arange(len(f)), sign_rows)

    G_full = np.vstack([game.Acoup, F[local_kept]])
    h_full = np.concatenate([game.bcoup, f[local_kept]])
    G = (G_full @ S) * sign
    h = h_full - G_full @ s0
    peak = np.abs(G).max(axis=1, initial=0.0)
    row_scale = np.where(peak > 0, 1.0 / np.where(peak > 0, peak, 1.0), 1.0)
    G = G * row_scale[:, None]
    h = h * row_scale

    K = game.bigQ + 2.0 * tikhonov * np.eye(n)
    M_hat = (S.T @ K @ S) * np.outer(sign, sign)
    M = np.block([[M_hat, G.T], [-G, np.zeros((len(h), len(h)))]])
    c_base = S.T @ (K @ s0 + game.qlin)
    CS = S.T @ game.Cmap

    logger.debug(
        "LCP form built",
        independent=n_i,
        eliminated=len(dep),
        constraint_rows=len(h),
        tikhonov=tikhonov,
    )
    return LcpForm(
        game=game,
        tikhonov=tikhonov,
        indep=indep,
        dep=dep,
        S=S,
        s0=s0,
        sign=sign,
        sign_rows=sign_rows,
        local_kept=local_kept,
        row_scale=row_scale,
        M=M,
        h=h,
        c_base=c_base,
        CS=CS,
    )


def _stationarity(game, z0, x, lam, lam_local, tikhonov) -> np.ndarray:
    return (
        game.pseudo_gradient(z0, x)
        + 2.0 * tikhonov * x
        + game.Acoup.T @ lam
        + game.Flocal.T @ lam_local
    )


def _equality_multipliers(game, z0, x, lam, lam_local, tikhonov) -> np.ndarray:
    v = _stationarity(game, z0, x, lam, lam_local, tikhonov)
    dep = np.asarray(game.eq_pivots, dtype=int)
    if len(dep) == 0:
        return np.zeros(0)
    return -np.linalg.solve(game.Eeq[:, dep].T, v[dep])


def kkt_residual(
    game: AssembledGame,
    z0: LeaderLike,
    x: np.ndarray,
    lam: np.ndarray,
    lam_local: np.ndarray,
    nu: Optional[np.ndarray] = None,
    tikhonov: float = 0.0,
) -> KktReport:
    """KKT residuals of the followers' game at a primal-dual point.

    When nu is omitted the equality multipliers are recovered by least squares.
    """
    z = leader_vector(z0)
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    lam_local = np.asarray(lam_local, dtype=float)
    v = _stationarity(game, z, x, lam, lam_local, tikhonov)
    if game.Eeq.shape[0]:
        if nu is None:
            nu = np.linalg.lstsq(game.Eeq.T, -v, rcond=None)[0]
        v = v + game.Eeq.T @ nu
        eq_violation = np.abs(game.Eeq @ x - game.eeq).max()
    else:
        nu = np.zeros(0)
        eq_violation = 0.0

    slack_coupling = game.bcoup - game.Acoup @ x
    slack_local = game.flocal - game.Flocal @ x
    primal = max(
        0.0,
        float(eq_violation),
        float((-slack_coupling).max(initial=0.0)),
        float((-slack_local).max(initial=0.0)),
    )
    dual = max(0.0, float((-lam).max(initial=0.0)), float((-lam_local).max(initial=0.0)))
    comp_coupling = np.abs(lam * slack_coupling)
    comp_local = np.abs(lam_local * slack_local)
    return KktReport(
        stationarity=float(np.abs(v).max(initial=0.0)),
        primal=primal,
        dual=dual,
        complementarity=float(max(comp_coupling.max(initial=0.0), comp_local.max(initial=0.0))),
        comp_coupling=comp_coupling,
        comp_local=comp_local,
        nu=np.asarray(nu, dtype=float),
    )


def _package(form: LcpForm, z0: np.ndarray, res: LcpResult) -> VgneSolution:
    x, lam, lam_local, nu = form.recover(z0, res)
    report = kkt_residual(form.game, z0, x, lam, lam_local, nu=nu, tikhonov=form.tikhonov)
    return VgneSolution(
        x=x,
        lam=lam,
        lam_local=lam_local,
        nu=nu,
        stat_residual=report.stationarity,
        comp_residual=report.complementarity,
        feas_residual=report.feasibility,
        method=res.method,
        iterations=res.iterations,
        basis=res.basis,
    )


def _passes(sol: VgneSolution, opts: SolverConfig) -> bool:
    return (
        sol.stat_residual <= opts.tol_stat
        and sol.comp_residual <= opts.tol_comp
        and sol.feas_residual <= opts.tol_feas
    )


def _residuals(sol: VgneSolution) -> Dict[str, float]:
    return {
        "stationarity": sol.stat_residual,
        "complementarity": sol.comp_residual,
        "feasibility": sol.feas_residual,
    }


def solve_vgne(
    game: AssembledGame,
    z0: LeaderLike,
    opts: Optional[SolverConfig] = None,
    warm: Optional[VgneSolution] = None,
) -> VgneSolution:
    """Compute a variational GNE of the followers for the leader decision z0.

    Args:
        game: Assembled game
        z0: Leader decision in Gamma
        opts: Solver options, defaults to settings.solver
        warm: Previous solution whose active set is tried first

    Returns:
        Solution meeting the stationarity, complementarity and feasibility tolerances

    Raises:
        RayTerminationError: If pivoting certifies an infeasible complementarity system
        IterationLimitError: If no method meets the tolerances
    """
    opts = opts or settings.solver
    z = leader_vector(z0)
    if z.shape != (game.n_leader,):
        raise ValueError(f"z0: expected {game.n_leader} entries, got {z.size}")
    if not game.in_gamma(z, tol=1e-12):
        raise ValueError("z0 lies outside the leader box")

    start = time.perf_counter()
    form = lcp_form(game, opts.tikhonov)
    q = form.q(z)
    best: Optional[VgneSolution] = None
    z_init: Optional[np.ndarray] = None

    if warm is not None and opts.method == "pivoting" and len(warm.basis) == form.size:
        res = solve_active_set(form.M, q, warm.basis, max_iter=opts.warm_start_max_iter)
        if res is not None:
            sol = _package(form, z, res)
            if _passes(sol, opts):
                _record(sol, start, "ok")
                return sol

    if opts.method == "pivoting":
        try:
            res = lemke(
                form.M,
                q,
                max_pivots=opts.max_pivots,
                pivot_tol=opts.pivot_tol,
                refactor_every=opts.refactor_every,
            )
            LEMKE_PIVOTS.observe(res.iterations)
            z_init = res.z
            best = _package(form, z, res)
            if _passes(best, opts):
                _record(best, start, "ok")
                return best
            logger.warning("Pivoting missed tolerances, trying splitting", **_residuals(best))
        except RayTerminationError:
            VGNE_SOLVES.labels(method="lemke", status="ray").inc()
            raise
        except (IterationLimitError, np.linalg.LinAlgError) as exc:
            logger.warning("Pivoting stopped early, trying splitting", error=str(exc))

    try:
        res = extragradient(
            form.M,
            q,
            step=form.step,
            max_iter=opts.fallback_max_iter,
            tol=1e-2 * min(opts.tol_comp, opts.tol_feas),
            z_init=z_init,
        )
        sol = _package(form, z, res)
    except IterationLimitError as exc:
        VGNE_SOLVES.labels(method="extragradient", status="limit").inc()
        if best is not None:
            exc.residuals.update(_residuals(best))
        raise
    if not _passes(sol, opts):
        VGNE_SOLVES.labels(method="extragradient", status="limit").inc()
        raise IterationLimitError("Follower equilibrium missed tolerances", _residuals(sol))
    _record(sol, start, "ok")
    return sol


def _record(sol: VgneSolution, start: float, status: str) -> None:
    elapsed = time.perf_counter() - start
    VGNE_SOLVES.labels(method=sol.method, status=status).inc()
    VGNE_LATENCY.labels(method=sol.method).observe(elapsed)
    logger.debug(
        "Follower equilibrium solved",
        method=sol.method,
        iterations=sol.iterations,
        seconds=round(elapsed, 6),
        **_residuals(sol),
    )


def sample_feasible_points(game: AssembledGame, count: int, seed: int = 0) -> np.ndarray:
    """Random points of the collective feasible set by hit-and-run from the Slater point.

    Raises:
        InfeasibleGameError: If the feasible set has no interior point
    """
    probe = slater_probe(game)
    if not probe.success:
        raise InfeasibleGameError("Feasible set has no interior point", {"slack": probe.slack})
    G = np.vstack([game.Flocal, game.Acoup])
    h = np.concatenate([game.flocal, game.bcoup])
    rng = np.random.default_rng(seed)
    return hit_and_run(G, h, probe.point, count, rng, E=game.Eeq)


def verify_vi(
    game: AssembledGame,
    z0: LeaderLike,
    x: np.ndarray,
    samples: int = 1000,
    seed: int = 0,
    points: Optional[Sequence[np.ndarray]] = None,
    tikhonov: float = 0.0,
) -> float:
    """Worst value of (w - x)'H(z0, x) over sampled feasible w.

    x itself is always part of the sample, so the result is at most zero.
    """
    x = np.asarray(x, dtype=float)
    H = game.pseudo_gradient(z0, x) + 2.0 * tikhonov * x
    candidates = [x[None, :]]
    if samples > 0:
        candidates.append(sample_feasible_points(game, samples, seed))
    if points is not None:
        candidates.append(np.atleast_2d(np.asarray(points, dtype=float)))
    W = np.vstack(candidates)
    worst = float(((W - x) @ H).min())
    logger.debug("VI check", samples=len(W), worst=worst)
    return worst
