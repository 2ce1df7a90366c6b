"""
Assembly of the followers' game and the single-level model.

A validated scenario is turned into dense matrices over the collective follower
vector x = col(x_1, ..., x_N), each x_i = col(p, y, e, pC, pDC, k, t):

- pseudo-gradient H(z0, x) = bigQ x + C z0 + qlin
- local rows F x <= f (block diagonal), coupling rows A x <= b (shared)
- equalities Eeq x = eeq, one pivot variable per row
- leader box Gamma: F_dso z0 <= g_dso
- leader cost J(z0, x) = x' Px x + px' x + z0' L x

The big-M single-level model is built from the same objects and written in
free MPS format.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from src.config import settings
from src.exceptions import ExportError, InfeasibleGameError
from src.logging_setup import logger
from src.models.market import (
    E,
    K,
    N_BLOCKS,
    P,
    PC,
    PDC,
    TT,
    Y,
    Scenario,
    leader_vector,
    validate_scenario,
)
from src.utils.mps import MpsModel, read_mps, write_mps


class _Rows:
    """Sparse row accumulator; densified once assembly is complete."""

    def __init__(self, n: int):
        self.n = n
        self.coefs: List[Dict[int, float]] = []
        self.rhs: List[float] = []
        self.labels: List[str] = []
        self.pivots: List[int] = []

    def add(self, coefs: Dict[int, float], rhs: float, label: str, pivot: int = -1) -> None:
        self.coefs.append(coefs)
        self.rhs.append(float(rhs))
        self.labels.append(label)
        self.pivots.append(pivot)

    def __len__(self) -> int:
        return len(self.rhs)

    def matrix(self) -> np.ndarray:
        M = np.zeros((len(self.coefs), self.n))
        for row, coefs in enumerate(self.coefs):
            for col, val in coefs.items():
                M[row, col] += val
        return M

    def vector(self) -> np.ndarray:
        return np.asarray(self.rhs, dtype=float)


class _Indexer:
    def __init__(self, N: int, T: int):
        self.N = N
        self.T = T
        self.block = N_BLOCKS * T

    def __call__(self, i: int, b: int, tau: int) -> int:
        return i * self.block + b * self.T + tau


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EpigraphRows:
    """Rows of the epigraph reformulation of the incentive base."""

    F: np.ndarray
    f: np.ndarray
    local_labels: Tuple[str, ...]
    local_owner: Tuple[int, ...]
    A: np.ndarray
    b: np.ndarray
    coupling_labels: Tuple[str, ...]
    coupling_owner: Tuple[int, ...]
    masked: Tuple[int, ...]

    def rows_of(self, i: int) -> int:
        """Number of epigraph inequality rows attached to follower i."""
        return self.local_owner.count(i) + self.coupling_owner.count(i)


@dataclass(frozen=True, eq=False)
class AssembledGame:
    """Stacked matrix form of the followers' game and the leader problem."""

    scenario: Scenario
    N: int
    T: int
    Qblock: np.ndarray
    bigQ: np.ndarray
    Cmap: np.ndarray
    qlin: np.ndarray
    Flocal: np.ndarray
    flocal: np.ndarray
    local_labels: Tuple[str, ...]
    Acoup: np.ndarray
    bcoup: np.ndarray
    coupling_labels: Tuple[str, ...]
    Eeq: np.ndarray
    eeq: np.ndarray
    eq_labels: Tuple[str, ...]
    eq_pivots: np.ndarray
    F_dso: np.ndarray
    g_dso: np.ndarray
    Px: np.ndarray
    px: np.ndarray
    Lmap: np.ndarray
    lipschitz: float

    @property
    def n(self) -> int:
        return self.N * N_BLOCKS * self.T

    @property
    def n_leader(self) -> int:
        return 2 * self.T

    @property
    def leader_lo(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.scenario.c0_lo, dtype=float), np.zeros(self.T)])

    @property
    def leader_hi(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.scenario.c0_hi, dtype=float), np.ones(self.T)])

    def index(self, i: int, b: int, tau: int) -> int:
        return _Indexer(self.N, self.T)(i, b, tau)

    def pseudo_gradient(self, z0, x: np.ndarray) -> np.ndarray:
        return self.bigQ @ x + self.Cmap @ leader_vector(z0) + self.qlin

    def f0(self, z0) -> float:
        return 0.0

    def fx(self, x: np.ndarray) -> float:
        return float(x @ self.Px @ x + self.px @ x)

    def f0i(self, x: np.ndarray, i: int) -> np.ndarray:
        """Leader-coupling piece col(-p_i, -t_i) of follower i."""
        blocks = np.asarray(x, dtype=float).reshape(self.N, N_BLOCKS, self.T)[i]
        return np.concatenate([-blocks[P], -blocks[TT]])

    def leader_cost(self, z0, x: np.ndarray) -> float:
        z = leader_vector(z0)
        return float(self.f0(z) + self.fx(x) + z @ (self.Lmap @ x))

    def in_gamma(self, z0, tol: float = 0.0) -> bool:
        z = leader_vector(z0)
        return bool(np.all(self.F_dso @ z <= self.g_dso + tol))


def build_epigraph(scen: Scenario) -> EpigraphRows:
    """Epigraph rows of -phi_i on every response interval.

    Per follower and response interval: t <= 0 and t >= -p_bar * y (local) and
    t >= -((p_bar - beta) y_i + beta (r - sum_{j != i} y_j)) (coupling). Off
    response intervals t is masked to zero.
    """
    N, T = scen.N, scen.T
    n = N * N_BLOCKS * T
    at = _Indexer(N, T)
    local, coupling = _Rows(n), _Rows(n)
    local_owner, coupling_owner, masked = [], [], []
    for i in range(N):
        for tau in range(T):
            r = scen.r[tau]
            if r <= 0:
                masked.append(at(i, TT, tau))
                continue
            local.add({at(i, TT, tau): 1.0}, 0.0, f"t_upper[i={i},tau={tau}]")
            local.add(
                {at(i, TT, tau): -1.0, at(i, Y, tau): -scen.p_bar},
                0.0,
                f"epi_local[i={i},tau={tau}]",
            )
            local_owner.extend([i, i])
            coefs = {at(i, TT, tau): -1.0, at(i, Y, tau): -(scen.p_bar - scen.beta)}
            for j in range(N):
                if j != i:
                    coefs[at(j, Y, tau)] = scen.beta
            coupling.add(coefs, scen.beta * r, f"epi_cross[i={i},tau={tau}]")
            coupling_owner.append(i)
    return EpigraphRows(
        F=local.matrix(),
        f=local.vector(),
        local_labels=tuple(local.labels),
        local_owner=tuple(local_owner),
        A=coupling.matrix(),
        b=coupling.vector(),
        coupling_labels=tuple(coupling.labels),
        coupling_owner=tuple(coupling_owner),
        masked=tuple(masked),
    )


def _local_rows(scen: Scenario, at: _Indexer, rows: _Rows) -> None:
    for i, spec in enumerate(scen.prosumers):
        for tau in range(scen.T):
            r = scen.r[tau]
            rows.add({at(i, P, tau): -1.0}, 0.0, f"p_lower[i={i},tau={tau}]")
            if r > 0:
                rows.add({at(i, Y, tau): -1.0}, 0.0, f"y_lower[i={i},tau={tau}]")
            if spec.has_storage:
                rows.add({at(i, E, tau): -1.0}, 0.0, f"e_lower[i={i},tau={tau}]")
                rows.add({at(i, E, tau): 1.0}, spec.e_max, f"e_upper[i={i},tau={tau}]")
                rows.add({at(i, PC, tau): -1.0}, 0.0, f"pC_lower[i={i},tau={tau}]")
                rows.add({at(i, PC, tau): 1.0}, spec.p_max, f"pC_upper[i={i},tau={tau}]")
                rows.add({at(i, PDC, tau): -1.0}, 0.0, f"pDC_lower[i={i},tau={tau}]")
                rows.add({at(i, PDC, tau): 1.0}, spec.p_max, f"pDC_upper[i={i},tau={tau}]")
            if r < 0:
                rows.add({at(i, K, tau): 1.0}, 0.0, f"k_upper[i={i},tau={tau}]")
            balance = {at(i, P, tau): -1.0, at(i, K, tau): 1.0}
            balance[at(i, PC, tau)] = 1.0
            balance[at(i, PDC, tau)] = -1.0
            rows.add(
                balance,
                -(spec.d[tau] - spec.s[tau]),
                f"demand[i={i},tau={tau}]",
            )


def _equality_rows(scen: Scenario, at: _Indexer, masked_t: Sequence[int], rows: _Rows) -> None:
    for i, spec in enumerate(scen.prosumers):
        for tau in range(scen.T):
            if spec.has_storage:
                coefs = {
                    at(i, E, tau): 1.0,
                    at(i, PC, tau): -scen.dt * spec.eta_c,
                    at(i, PDC, tau): scen.dt * spec.eta_dc,
                }
                if tau > 0:
                    coefs[at(i, E, tau - 1)] = -1.0
                rhs = spec.e0 if tau == 0 else 0.0
                rows.add(coefs, rhs, f"storage[i={i},tau={tau}]", pivot=at(i, E, tau))
            else:
                for b, name in ((E, "e"), (PC, "pC"), (PDC, "pDC")):
                    col = at(i, b, tau)
                    rows.add({col: 1.0}, 0.0, f"{name}_off[i={i},tau={tau}]", pivot=col)
            r = scen.r[tau]
            if r <= 0:
                col = at(i, Y, tau)
                rows.add({col: 1.0}, 0.0, f"y_off[i={i},tau={tau}]", pivot=col)
            if r >= 0:
                col = at(i, K, tau)
                rows.add({col: 1.0}, 0.0, f"k_off[i={i},tau={tau}]", pivot=col)
    for col in masked_t:
        i, rem = divmod(col, at.block)
        tau = rem - TT * scen.T
        rows.add({col: 1.0}, 0.0, f"t_off[i={i},tau={tau}]", pivot=col)


def _coupling_rows(scen: Scenario, at: _Indexer, rows: _Rows) -> None:
    for tau in range(scen.T):
        r = scen.r[tau]
        g = scen.g[tau]
        coefs = {}
        for i in range(scen.N):
            coefs[at(i, P, tau)] = 1.0
            coefs[at(i, Y, tau)] = 1.0
            coefs[at(i, K, tau)] = -1.0
        rows.add(coefs, max(g, g - r), f"grid[tau={tau}]")
    for tau in range(scen.T):
        r = scen.r[tau]
        if r < 0:
            coefs = {at(i, K, tau): -1.0 for i in range(scen.N)}
            rows.add(coefs, -r, f"rebound_cap[tau={tau}]")


def assemble(scen: Scenario) -> AssembledGame:
    """Assemble the matrix form of the game for a validated scenario."""
    validate_scenario(scen)
    N, T = scen.N, scen.T
    n = N * N_BLOCKS * T
    at = _Indexer(N, T)

    c1 = np.asarray(scen.c1, dtype=float)
    Qblock = np.zeros((N_BLOCKS * T, N_BLOCKS * T))
    Qblock[:T, :T] = np.diag(c1)
    bigQ = np.kron(np.eye(N) + np.ones((N, N)), Qblock)

    Cmap = np.zeros((n, 2 * T))
    qlin = np.zeros(n)
    px = np.zeros(n)
    Lmap = np.zeros((2 * T, n))
    for i in range(N):
        for tau in range(T):
            Cmap[at(i, P, tau), tau] = 1.0
            Cmap[at(i, TT, tau), T + tau] = 1.0
            qlin[at(i, Y, tau)] = scen.mu
            qlin[at(i, PC, tau)] = scen.delta
            qlin[at(i, PDC, tau)] = scen.delta
            px[at(i, TT, tau)] = 1.0
            if scen.r[tau] < 0:
                px[at(i, K, tau)] = scen.p_tilde
            Lmap[tau, at(i, P, tau)] = -1.0
            Lmap[T + tau, at(i, TT, tau)] = -1.0
    Px = -np.kron(np.ones((N, N)), Qblock)

    epi = build_epigraph(scen)
    local = _Rows(n)
    _local_rows(scen, at, local)
    Flocal = np.vstack([local.matrix(), epi.F])
    flocal = np.concatenate([local.vector(), epi.f])
    local_labels = tuple(local.labels) + epi.local_labels

    coupling = _Rows(n)
    _coupling_rows(scen, at, coupling)
    Acoup = np.vstack([coupling.matrix(), epi.A])
    bcoup = np.concatenate([coupling.vector(), epi.b])
    coupling_labels = tuple(coupling.labels) + epi.coupling_labels

    eq = _Rows(n)
    _equality_rows(scen, at, epi.masked, eq)

    eye = np.eye(2 * T)
    F_dso = np.vstack([eye, -eye])
    g_dso = np.concatenate(
        [
            np.asarray(scen.c0_hi, dtype=float),
            np.ones(T),
            -np.asarray(scen.c0_lo, dtype=float),
            np.zeros(T),
        ]
    )

    # Spectrum of kron(I + 11', Q) is {1, N + 1} x spectrum of Q
    lipschitz = float((N + 1) * max(c1.max(initial=0.0), 0.0))

    game = AssembledGame(
        scenario=scen,
        N=N,
        T=T,
        Qblock=_frozen(Qblock),
        bigQ=_frozen(bigQ),
        Cmap=_frozen(Cmap),
        qlin=_frozen(qlin),
        Flocal=_frozen(Flocal),
        flocal=_frozen(flocal),
        local_labels=local_labels,
        Acoup=_frozen(Acoup),
        bcoup=_frozen(bcoup),
        coupling_labels=coupling_labels,
        Eeq=_frozen(eq.matrix()),
        eeq=_frozen(eq.vector()),
        eq_labels=tuple(eq.labels),
        eq_pivots=np.asarray(eq.pivots, dtype=int),
        F_dso=_frozen(F_dso),
        g_dso=_frozen(g_dso),
        Px=_frozen(Px),
        px=_frozen(px),
        Lmap=_frozen(Lmap),
        lipschitz=lipschitz,
    )
    logger.debug(
        "Game assembled",
        N=N,
        T=T,
        variables=n,
        local_rows=len(flocal),
        coupling_rows=len(bcoup),
        equality_rows=len(eq),
    )
    return game


@dataclass(frozen=True)
class SlaterProbe:
    point: np.ndarray
    slack: float

    @property
    def success(self) -> bool:
        return self.slack > 0


def slater_probe(game: AssembledGame, cap: float = 1.0) -> SlaterProbe:
    """Find a collective point maximizing the common slack of all inequality rows.

    Raises:
        InfeasibleGameError: If the collective feasible set is empty.
    """
    G = np.vstack([game.Flocal, game.Acoup])
    h = np.concatenate([game.flocal, game.bcoup])
    n = game.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([G, np.ones((G.shape[0], 1))])
    A_eq = np.hstack([game.Eeq, np.zeros((game.Eeq.shape[0], 1))])
    bounds = [(None, None)] * n + [(None, cap)]
    res = linprog(c, A_ub=A_ub, b_ub=h, A_eq=A_eq, b_eq=game.eeq, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleGameError(f"Slater probe failed: {res.message}")
    slack = float(res.x[-1])
    if slack < 0:
        raise InfeasibleGameError(
            "Collective feasible set is empty", residuals={"max_violation": -slack}
        )
    logger.debug("Slater probe", slack=slack)
    return SlaterProbe(point=res.x[:n], slack=slack)


BigM = Union[float, Sequence[float], np.ndarray]


def _bigm_vector(value: Optional[BigM], default: float, size: int, name: str) -> np.ndarray:
    arr = np.full(size, default) if value is None else np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise ExportError(f"{name} big-M: expected {size} entries, got {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ExportError(f"{name} big-M constants must be positive and finite")
    return arr


def build_bigm_model(
    game: AssembledGame, primal: Optional[BigM] = None, dual: Optional[BigM] = None
) -> MpsModel:
    """Single-level big-M model of the leader problem over the followers' KKT system.

    Columns: z0, x, coupling duals, local duals, equality duals, binaries.
    Each inequality row j (coupling rows first, then local rows) gets a binary
    z_j with a_j x <= b_j, b_j - a_j x <= M_p (1 - z_j) and lambda_j <= M_d z_j.
    """
    n, T = game.n, game.T
    G = np.vstack([game.Acoup, game.Flocal])
    h = np.concatenate([game.bcoup, game.flocal])
    m_a, m_f, m_e = len(game.bcoup), len(game.flocal), len(game.eeq)
    m = m_a + m_f
    M_p = _bigm_vector(primal, settings.bigm.primal, m, "primal")
    M_d = _bigm_vector(dual, settings.bigm.dual, m, "dual")

    Gs = sp.csr_matrix(G)
    Es = sp.csr_matrix(game.Eeq)
    stat = sp.hstack(
        [
            sp.csr_matrix(game.Cmap),
            sp.csr_matrix(game.bigQ),
            Gs.T,
            Es.T,
            sp.csr_matrix((n, m)),
        ]
    )
    eqs = sp.hstack([sp.csr_matrix((m_e, 2 * T)), Es, sp.csr_matrix((m_e, m + m_e + m))])
    prim = sp.hstack([sp.csr_matrix((m, 2 * T)), Gs, sp.csr_matrix((m, m + m_e + m))])
    slack = sp.hstack([sp.csr_matrix((m, 2 * T)), -Gs, sp.csr_matrix((m, m + m_e)), sp.diags(M_p)])
    dual_rows = sp.hstack(
        [sp.csr_matrix((m, 2 * T + n)), sp.identity(m), sp.csr_matrix((m, m_e)), sp.diags(-M_d)]
    )
    A = sp.vstack([stat, eqs, prim, slack, dual_rows]).tocsr()
    A.eliminate_zeros()
    rhs = np.concatenate([-game.qlin, game.eeq, h, M_p - h, np.zeros(m)])

    row_names = (
        [f"STAT_{k}" for k in range(n)]
        + [f"EQ_{k}" for k in range(m_e)]
        + [f"PRIM_{j}" for j in range(m)]
        + [f"CP_{j}" for j in range(m)]
        + [f"CD_{j}" for j in range(m)]
    )
    row_types = ["E"] * (n + m_e) + ["L"] * (3 * m)

    col_names = (
        [f"C0_{tau}" for tau in range(T)]
        + [f"AL_{tau}" for tau in range(T)]
        + [f"X_{k}" for k in range(n)]
        + [f"LC_{j}" for j in range(m_a)]
        + [f"LL_{j}" for j in range(m_f)]
        + [f"NU_{k}" for k in range(m_e)]
        + [f"ZB_{j}" for j in range(m)]
    )
    nv = len(col_names)
    lb = np.concatenate(
        [game.leader_lo, np.full(n, -np.inf), np.zeros(m), np.full(m_e, -np.inf), np.zeros(m)]
    )
    ub = np.concatenate(
        [game.leader_hi, np.full(n, np.inf), np.full(m, np.inf), np.full(m_e, np.inf), np.ones(m)]
    )
    integer = np.zeros(nv, dtype=bool)
    integer[nv - m :] = True

    objective = np.zeros(nv)
    objective[2 * T : 2 * T + n] = game.px
    # Objective is 1/2 v'Qv + c'v
    L = sp.csr_matrix(game.Lmap)
    zero_tail = sp.csr_matrix((2 * T, nv - 2 * T - n))
    Q = sp.bmat(
        [
            [None, L, zero_tail],
            [L.T, sp.csr_matrix(2.0 * game.Px), None],
            [zero_tail.T, None, sp.csr_matrix((nv - 2 * T - n, nv - 2 * T - n))],
        ]
    ).tocsr()
    Q.eliminate_zeros()

    return MpsModel(
        name="dr_stackelberg_bigm",
        sense="MIN",
        row_names=row_names,
        row_types=row_types,
        col_names=col_names,
        objective=objective,
        A=A,
        rhs=rhs,
        lb=lb,
        ub=ub,
        integer=integer,
        Q=Q,
    )


def export_bigm(
    game: AssembledGame,
    path: Union[str, Path],
    primal: Optional[BigM] = None,
    dual: Optional[BigM] = None,
) -> Path:
    """Write the big-M single-level model to a free-format MPS file.

    Args:
        game: Assembled game
        path: Output file
        primal: Big-M of the primal slack rows, scalar or one per complementarity row
        dual: Big-M of the dual rows, scalar or one per complementarity row

    Returns:
        Path of the written file
    """
    model = build_bigm_model(game, primal, dual)
    path = Path(path)
    write_mps(model, path)
    logger.info(
        "Big-M model exported",
        path=str(path),
        rows=len(model.row_names),
        columns=len(model.col_names),
        binaries=int(model.integer.sum()),
    )
    return path


def read_bigm(path: Union[str, Path]) -> MpsModel:
    """Parse a file written by export_bigm."""
    return read_mps(Path(path))
