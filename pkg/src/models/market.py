"""
Market model for the demand-response Stackelberg game.

This module holds the domain types of the market (scenario, prosumers, leader
and follower decisions, reward ledger) and closed-form evaluation of every
market function: response and rebound rewards, the fair incentive split, the
affine pricing map, the DSO and prosumer costs and the constraint residuals.
Nothing here depends on a solver.
"""

from enum import Enum
from typing import List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.exceptions import ScenarioValidationError

# Order of the per-interval blocks inside one follower vector
BLOCKS = ("p", "y", "e", "pC", "pDC", "k", "t")
N_BLOCKS = len(BLOCKS)
P, Y, E, PC, PDC, K, TT = range(N_BLOCKS)

# mu is "much smaller" than p_bar below this share
MU_SHARE_LIMIT = 0.1


class IntervalClass(str, Enum):
    """Mutually exclusive classes of a scheduling interval."""

    NONE = "none"
    RESPONSE = "response"
    REBOUND = "rebound"


class ProsumerSpec(BaseModel):
    """Load, generation and storage data of one prosumer."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    prosumer_id: str = Field(default="", description="Identifier used in reports")
    d: List[float] = Field(..., description="Fixed load per interval, kW")
    s: List[float] = Field(..., description="Renewable generation per interval, kW")
    e_max: float = Field(..., ge=0, description="Storage capacity, kWh")
    p_max: float = Field(..., ge=0, description="Charge/discharge power limit, kW")
    eta_c: float = Field(default=1.0, gt=0, le=1, description="Charge coefficient")
    eta_dc: float = Field(default=1.0, gt=0, description="Discharge coefficient")
    e0: float = Field(default=0.0, ge=0, description="Initial state of charge, kWh")

    @property
    def has_storage(self) -> bool:
        return self.e_max > 0 and self.p_max > 0

    @model_validator(mode="after")
    def check_profiles(self) -> "ProsumerSpec":
        errors = prosumer_errors(self)
        if errors:
            raise ScenarioValidationError(errors)
        return self


def prosumer_errors(spec: ProsumerSpec) -> List[str]:
    """List every violated prosumer invariant."""
    name = spec.prosumer_id or "prosumer"
    errors = []
    if len(spec.d) != len(spec.s):
        errors.append(f"{name}: demand has {len(spec.d)} entries, solar has {len(spec.s)}")
    else:
        for tau, (d, s) in enumerate(zip(spec.d, spec.s)):
            if s > d:
                errors.append(f"{name}: solar {s} exceeds demand {d} at interval {tau}")
    if spec.e0 > spec.e_max:
        errors.append(f"{name}: e0 {spec.e0} exceeds e_max {spec.e_max}")
    return errors


class Scenario(BaseModel):
    """A full market instance over one scheduling horizon."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    T: int = Field(..., ge=1, description="Number of intervals")
    dt: float = Field(..., gt=0, description="Interval length in hours")
    r: List[float] = Field(..., description="Flexibility request, kW (+ response, - rebound)")
    p_bar: float = Field(..., gt=0, description="TSO response price")
    p_tilde: float = Field(..., ge=0, description="TSO rebound price")
    beta: float = Field(..., description="Saturation coefficient")
    c1: List[float] = Field(..., description="Slope of the pricing map")
    c0_lo: List[float] = Field(..., description="Lower bound on the price offset")
    c0_hi: List[float] = Field(..., description="Upper bound on the price offset")
    g: List[float] = Field(..., description="Grid capacity, kW")
    mu: float = Field(..., ge=0, description="Discomfort weight")
    delta: float = Field(..., gt=0, description="Storage degradation weight")
    prosumers: List[ProsumerSpec] = Field(..., min_length=1, description="Followers")

    @field_validator("prosumers")
    @classmethod
    def name_prosumers(cls, prosumers: List[ProsumerSpec]) -> List[ProsumerSpec]:
        """Unnamed prosumers are called b1, b2, ... by position."""
        return [
            p if p.prosumer_id else p.model_copy(update={"prosumer_id": f"b{i + 1}"})
            for i, p in enumerate(prosumers)
        ]

    @property
    def N(self) -> int:
        return len(self.prosumers)

    @model_validator(mode="after")
    def check_invariants(self) -> "Scenario":
        errors = scenario_errors(self)
        if errors:
            raise ScenarioValidationError(errors)
        return self

    def warnings(self) -> List[str]:
        """Soft invariants: reported, never enforced."""
        notes = []
        if self.beta > self.p_bar:
            notes.append(f"beta {self.beta} exceeds p_bar {self.p_bar}")
        if self.mu >= MU_SHARE_LIMIT * self.p_bar:
            notes.append(f"mu {self.mu} is not small against p_bar {self.p_bar}")
        return notes


def scenario_errors(scen: Scenario) -> List[str]:
    """List every violated scenario invariant."""
    errors = []
    T = scen.T
    for name in ("r", "c1", "c0_lo", "c0_hi", "g"):
        size = len(getattr(scen, name))
        if size != T:
            errors.append(f"{name}: expected {T} entries, got {size}")
    for spec in scen.prosumers:
        for name in ("d", "s"):
            size = len(getattr(spec, name))
            if size != T:
                errors.append(
                    f"{spec.prosumer_id or 'prosumer'}.{name}: expected {T} entries, got {size}"
                )
    if errors:
        return errors

    if scen.prosumers and scen.beta < scen.p_bar / scen.N:
        errors.append(f"beta: {scen.beta} is below p_bar/N = {scen.p_bar / scen.N}")
    for tau in range(T):
        if scen.c1[tau] < 0:
            errors.append(f"c1: negative slope {scen.c1[tau]} at interval {tau}")
        if scen.c0_lo[tau] < 0:
            errors.append(f"c0_lo: negative bound {scen.c0_lo[tau]} at interval {tau}")
        if scen.c0_lo[tau] > scen.c0_hi[tau]:
            errors.append(
                f"c0_hi: {scen.c0_hi[tau]} below c0_lo {scen.c0_lo[tau]} at interval {tau}"
            )
        if scen.g[tau] < 0:
            errors.append(f"g: negative capacity {scen.g[tau]} at interval {tau}")
    ids = [spec.prosumer_id for spec in scen.prosumers]
    if len(set(ids)) != len(ids):
        errors.append(f"prosumers: prosumer_id values must be unique, got {ids}")
    for spec in scen.prosumers:
        errors.extend(prosumer_errors(spec))
    return errors


def validate_scenario(scen: Scenario) -> None:
    """Re-check a scenario that may have bypassed construction-time validation."""
    errors = scenario_errors(scen)
    if errors:
        raise ScenarioValidationError(errors)


class LeaderDecision(BaseModel):
    """The DSO strategy z0 = (c0, alpha)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    c0: List[float] = Field(..., description="Price offset per interval")
    alpha: List[float] = Field(..., description="Incentive share per interval")

    def to_vector(self) -> np.ndarray:
        c0 = np.asarray(self.c0, dtype=float)
        return np.concatenate([c0, np.asarray(self.alpha, dtype=float)])

    @classmethod
    def from_vector(cls, z0: np.ndarray) -> "LeaderDecision":
        z0 = np.asarray(z0, dtype=float)
        T = z0.size // 2
        return cls(c0=z0[:T].tolist(), alpha=z0[T:].tolist())

    def in_box(self, scen: Scenario, tol: float = 0.0) -> bool:
        c0 = np.asarray(self.c0)
        alpha = np.asarray(self.alpha)
        return bool(
            np.all(c0 >= np.asarray(scen.c0_lo) - tol)
            and np.all(c0 <= np.asarray(scen.c0_hi) + tol)
            and np.all(alpha >= -tol)
            and np.all(alpha <= 1 + tol)
        )


class FollowerDecision(BaseModel):
    """Decision x_i = (p, y, e, pC, pDC, k, t) of one prosumer."""

    model_config = ConfigDict(frozen=True)

    p: List[float]
    y: List[float]
    e: List[float]
    pC: List[float]
    pDC: List[float]
    k: List[float]
    t: List[float]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(getattr(self, name), dtype=float) for name in BLOCKS])

    @classmethod
    def from_vector(cls, x_i: np.ndarray) -> "FollowerDecision":
        blocks = np.asarray(x_i, dtype=float).reshape(N_BLOCKS, -1)
        return cls(**{name: blocks[b].tolist() for b, name in enumerate(BLOCKS)})

    @classmethod
    def zeros(cls, T: int) -> "FollowerDecision":
        return cls.from_vector(np.zeros(N_BLOCKS * T))


class RewardLedger(BaseModel):
    """Per-interval money flows of a market outcome."""

    pi_R: List[float] = Field(..., description="Aggregate response reward to the DSO")
    pi_B: List[float] = Field(..., description="Rebound reward to the DSO")
    phi: List[List[float]] = Field(..., description="Incentive base per prosumer and interval")
    dso_net: List[float] = Field(..., description="Response reward kept by the DSO")
    energy_revenue: List[float] = Field(..., description="DSO energy sales revenue")


LeaderLike = Union[LeaderDecision, np.ndarray, Sequence[float]]
FollowersLike = Union[Sequence[FollowerDecision], np.ndarray]


def leader_vector(z0: LeaderLike) -> np.ndarray:
    if isinstance(z0, LeaderDecision):
        return z0.to_vector()
    return np.asarray(z0, dtype=float)


def _follower_vector(x_i) -> np.ndarray:
    if isinstance(x_i, FollowerDecision):
        return x_i.to_vector()
    return np.asarray(x_i, dtype=float).ravel()


def collective(x: FollowersLike, scen: Scenario) -> np.ndarray:
    """Return the collective decision as an array of shape (N, 7, T)."""
    if isinstance(x, np.ndarray):
        arr = np.asarray(x, dtype=float)
    else:
        arr = np.stack([_follower_vector(xi) for xi in x])
    if arr.size != scen.N * N_BLOCKS * scen.T:
        raise ValueError(
            f"Collective decision has {arr.size} entries, expected {scen.N * N_BLOCKS * scen.T}"
        )
    return arr.reshape(scen.N, N_BLOCKS, scen.T)


def classify_intervals(scen: Scenario) -> List[IntervalClass]:
    classes = []
    for r_tau in scen.r:
        if r_tau > 0:
            classes.append(IntervalClass.RESPONSE)
        elif r_tau < 0:
            classes.append(IntervalClass.REBOUND)
        else:
            classes.append(IntervalClass.NONE)
    return classes


def _interval_vector(values, scen: Scenario, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (scen.T,):
        raise ValueError(f"{name}: expected shape ({scen.T},), got {arr.shape}")
    return arr


def eval_pi_R(ybar, scen: Scenario) -> np.ndarray:
    """Aggregate response reward paid by the TSO to the DSO, per interval."""
    ybar = _interval_vector(ybar, scen, "ybar")
    if np.any(ybar < 0):
        raise ValueError("ybar: aggregate response must be nonnegative")
    r = np.asarray(scen.r, dtype=float)
    n_beta = scen.N * scen.beta
    out = np.zeros(scen.T)
    response = r > 0
    below = response & (ybar <= r)
    above = response & (ybar > r)
    out[below] = scen.p_bar * ybar[below]
    out[above] = (scen.p_bar - n_beta) * ybar[above] + n_beta * r[above]
    return out


def eval_phi_R(i: int, y_i, y_others_sum, scen: Scenario) -> np.ndarray:
    """Incentive base of prosumer i given the others' aggregate response.

    Negative values are returned unchanged when the others already exceed the
    request.
    """
    if not 0 <= i < scen.N:
        raise ValueError(f"Prosumer index {i} out of range for N={scen.N}")
    y_i = _interval_vector(y_i, scen, "y_i")
    others = _interval_vector(y_others_sum, scen, "y_others_sum")
    if np.any(y_i < 0) or np.any(others < 0):
        raise ValueError("Response flexibility must be nonnegative")
    r = np.asarray(scen.r, dtype=float)
    residual = r - others
    out = np.zeros(scen.T)
    response = r > 0
    below = response & (y_i <= residual)
    above = response & (y_i > residual)
    out[below] = scen.p_bar * y_i[below]
    out[above] = (scen.p_bar - scen.beta) * y_i[above] + scen.beta * residual[above]
    return out


def eval_pi_B(kbar, scen: Scenario) -> np.ndarray:
    """Rebound reward paid by the TSO to the DSO, per interval."""
    kbar = _interval_vector(kbar, scen, "kbar")
    if np.any(kbar > 0):
        raise ValueError("kbar: aggregate rebound must be nonpositive")
    r = np.asarray(scen.r, dtype=float)
    return np.where(r < 0, -scen.p_tilde * kbar, 0.0)


def eval_price(pbar, scen: Scenario, z0: LeaderLike) -> np.ndarray:
    """Affine pricing map h = C1 * pbar + c0."""
    pbar = _interval_vector(pbar, scen, "pbar")
    z = leader_vector(z0)
    if z.size != 2 * scen.T:
        raise ValueError(f"z0: expected {2 * scen.T} entries, got {z.size}")
    return np.asarray(scen.c1, dtype=float) * pbar + z[: scen.T]


def all_phi(xs: np.ndarray, scen: Scenario) -> np.ndarray:
    """Incentive base of every prosumer, shape (N, T)."""
    y = np.maximum(xs[:, Y, :], 0.0)
    total = y.sum(axis=0)
    return np.stack([eval_phi_R(i, y[i], total - y[i], scen) for i in range(scen.N)])


def eval_dso_cost(z0: LeaderLike, x: FollowersLike, scen: Scenario, epigraph: bool = True) -> float:
    """DSO cost: minus energy revenue minus the retained DR rewards.

    With ``epigraph`` the retained response reward is read from the auxiliary
    variables t, otherwise it is recomputed from y through the branch formulas.
    """
    z = leader_vector(z0)
    xs = collective(x, scen)
    alpha = z[scen.T :]
    ptot = xs[:, P, :].sum(axis=0)
    price = eval_price(ptot, scen, z)
    cost = -float(price @ ptot)
    if epigraph:
        cost += float((1.0 - alpha) @ xs[:, TT, :].sum(axis=0))
    else:
        cost -= float((1.0 - alpha) @ all_phi(xs, scen).sum(axis=0))
    kbar = xs[:, K, :].sum(axis=0)
    r = np.asarray(scen.r, dtype=float)
    cost += scen.p_tilde * float(kbar[r < 0].sum())
    return cost


def eval_prosumer_cost(
    i: int,
    x_i: Union[FollowerDecision, np.ndarray],
    x_others: FollowersLike,
    z0: LeaderLike,
    scen: Scenario,
    epigraph: bool = True,
) -> float:
    """Cost of prosumer i: purchases + degradation + discomfort - incentive."""
    z = leader_vector(z0)
    xi = _follower_vector(x_i).reshape(N_BLOCKS, scen.T)
    if isinstance(x_others, np.ndarray):
        others = np.asarray(x_others, dtype=float).reshape(-1, N_BLOCKS, scen.T)
    elif len(x_others):
        others = np.stack([_follower_vector(o) for o in x_others])
        others = others.reshape(-1, N_BLOCKS, scen.T)
    else:
        others = np.zeros((0, N_BLOCKS, scen.T))
    if others.shape[0] != scen.N - 1:
        raise ValueError(f"Expected {scen.N - 1} other prosumers, got {others.shape[0]}")
    alpha = z[scen.T :]
    ptot = xi[P] + others[:, P, :].sum(axis=0)
    price = eval_price(ptot, scen, z)
    cost = float(price @ xi[P])
    cost += scen.delta * float(xi[PC].sum() + xi[PDC].sum())
    cost += scen.mu * float(xi[Y].sum())
    if epigraph:
        cost += float(alpha @ xi[TT])
    else:
        others_y = np.maximum(others[:, Y, :], 0.0).sum(axis=0)
        phi = eval_phi_R(i, np.maximum(xi[Y], 0.0), others_y, scen)
        cost -= float(alpha @ phi)
    return cost


class ResidualReport(BaseModel):
    """Signed constraint values: equalities should vanish, inequalities be <= 0."""

    storage: List[List[float]]
    bounds: dict
    demand: List[List[float]]
    y_mask: List[List[float]]
    t_mask: List[List[float]]
    k_mask: List[List[float]]
    coupling: List[float]
    rebound_cap: List[float]

    def max_equality(self) -> float:
        storage = np.abs(np.asarray(self.storage)).max(initial=0.0)
        masks = [
            np.abs(np.asarray(m)).max(initial=0.0)
            for m in (self.y_mask, self.t_mask, self.k_mask)
        ]
        return float(max(storage, *masks))

    def max_inequality(self) -> float:
        vals = [np.asarray(self.demand).max(initial=-np.inf)]
        vals.extend([max(self.coupling), max(self.rebound_cap)])
        vals.extend(np.asarray(v).max(initial=-np.inf) for v in self.bounds.values())
        return float(max(vals))

    def max_violation(self) -> float:
        return max(self.max_equality(), self.max_inequality(), 0.0)


def constraint_residuals(x: FollowersLike, scen: Scenario) -> ResidualReport:
    """Signed residuals of the local and coupling constraints of the followers."""
    xs = collective(x, scen)
    r = np.asarray(scen.r, dtype=float)
    g = np.asarray(scen.g, dtype=float)
    e0 = np.array([spec.e0 for spec in scen.prosumers])
    eta_c = np.array([spec.eta_c for spec in scen.prosumers])[:, None]
    eta_dc = np.array([spec.eta_dc for spec in scen.prosumers])[:, None]
    e_max = np.array([spec.e_max for spec in scen.prosumers])[:, None]
    p_max = np.array([spec.p_max for spec in scen.prosumers])[:, None]
    d = np.array([spec.d for spec in scen.prosumers])
    s = np.array([spec.s for spec in scen.prosumers])

    e = xs[:, E, :]
    e_prev = np.concatenate([e0[:, None], e[:, :-1]], axis=1)
    storage = e - e_prev - scen.dt * (eta_c * xs[:, PC, :] - eta_dc * xs[:, PDC, :])

    bounds = {
        "p_lower": (-xs[:, P, :]).tolist(),
        "y_lower": (-xs[:, Y, :]).tolist(),
        "e_lower": (-e).tolist(),
        "e_upper": (e - e_max).tolist(),
        "pC_lower": (-xs[:, PC, :]).tolist(),
        "pC_upper": (xs[:, PC, :] - p_max).tolist(),
        "pDC_lower": (-xs[:, PDC, :]).tolist(),
        "pDC_upper": (xs[:, PDC, :] - p_max).tolist(),
        "k_upper": xs[:, K, :].tolist(),
        "t_upper": xs[:, TT, :].tolist(),
    }
    demand = (d - s + xs[:, PC, :] - xs[:, PDC, :]) - (xs[:, P, :] - xs[:, K, :])

    # Pinned to zero outside the intervals of their request sign
    y_mask = np.where(r > 0, 0.0, xs[:, Y, :])
    t_mask = np.where(r > 0, 0.0, xs[:, TT, :])
    k_mask = np.where(r < 0, 0.0, xs[:, K, :])

    load = xs[:, P, :].sum(axis=0) + xs[:, Y, :].sum(axis=0) - xs[:, K, :].sum(axis=0)
    coupling = load - np.maximum(g, g - r)
    rebound_cap = np.where(r < 0, -xs[:, K, :].sum(axis=0) + r, 0.0)

    return ResidualReport(
        storage=storage.tolist(),
        bounds=bounds,
        demand=demand.tolist(),
        y_mask=y_mask.tolist(),
        t_mask=t_mask.tolist(),
        k_mask=k_mask.tolist(),
        coupling=coupling.tolist(),
        rebound_cap=rebound_cap.tolist(),
    )


def build_ledger(z0: LeaderLike, x: FollowersLike, scen: Scenario) -> RewardLedger:
    """Money flows of an outcome, computed from the branch formulas."""
    z = leader_vector(z0)
    xs = collective(x, scen)
    alpha = z[scen.T :]
    y = np.maximum(xs[:, Y, :], 0.0)
    kbar = np.minimum(xs[:, K, :].sum(axis=0), 0.0)
    pi_R = eval_pi_R(y.sum(axis=0), scen)
    phi = all_phi(xs, scen)
    ptot = xs[:, P, :].sum(axis=0)
    return RewardLedger(
        pi_R=pi_R.tolist(),
        pi_B=eval_pi_B(kbar, scen).tolist(),
        phi=phi.tolist(),
        dso_net=((1.0 - alpha) * pi_R).tolist(),
        energy_revenue=(eval_price(ptot, scen, z) * ptot).tolist(),
    )
