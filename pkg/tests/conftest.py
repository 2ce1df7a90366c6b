"""
Shared fixtures for the market solver tests.

Scenarios here are small enough for exact solves in milliseconds.
"""

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest

from src.models.assembler import assemble
from src.models.market import ProsumerSpec, Scenario

EXAMPLE_DIR = Path(__file__).resolve().parent.parent / "data" / "example"


def build_scenario(
    N: int = 2,
    T: int = 2,
    r: Optional[Sequence[float]] = None,
    storage: bool = True,
    demand: float = 2.0,
    solar: float = 0.5,
    **overrides,
) -> Scenario:
    """Small valid scenario; keyword overrides replace market fields."""
    prosumers = [
        ProsumerSpec(
            prosumer_id=f"b{i + 1}",
            d=[demand + 0.5 * i] * T,
            s=[solar] * T,
            e_max=4.0 if storage else 0.0,
            p_max=2.0 if storage else 0.0,
            eta_c=0.95 if storage else 1.0,
            eta_dc=1.05 if storage else 1.0,
            e0=1.0 if storage else 0.0,
        )
        for i in range(N)
    ]
    fields = dict(
        T=T,
        dt=1.0,
        r=list(r) if r is not None else [0.0] * T,
        p_bar=10.0,
        p_tilde=3.0,
        beta=max(6.0, 10.0 / N),
        c1=[0.1] * T,
        c0_lo=[1.0] * T,
        c0_hi=[3.0] * T,
        g=[100.0] * T,
        mu=0.05,
        delta=0.01,
        prosumers=prosumers,
    )
    fields.update(overrides)
    return Scenario(**fields)


def random_scenario(rng: np.random.Generator, max_N: int = 3, max_T: int = 4) -> Scenario:
    """Random valid scenario with a mixed request and feasible grid capacity."""
    N = int(rng.integers(1, max_N + 1))
    T = int(rng.integers(1, max_T + 1))
    r = rng.choice([-1.0, 0.0, 1.0], size=T) * rng.uniform(0.5, 2.0, size=T)
    p_bar = float(rng.uniform(5.0, 15.0))
    beta = float(rng.uniform(p_bar / N, p_bar))
    lo = rng.uniform(0.5, 2.0, size=T)
    return build_scenario(
        N=N,
        T=T,
        r=r.tolist(),
        storage=bool(rng.integers(0, 2)),
        p_bar=p_bar,
        beta=beta,
        c1=rng.uniform(0.01, 0.2, size=T).tolist(),
        c0_lo=lo.tolist(),
        c0_hi=(lo + rng.uniform(0.5, 2.0, size=T)).tolist(),
        mu=float(rng.uniform(0.0, 0.05 * p_bar)),
    )


def random_leader(game, rng: np.random.Generator) -> np.ndarray:
    return game.leader_lo + rng.uniform(size=game.n_leader) * (game.leader_hi - game.leader_lo)


@pytest.fixture
def scenario():
    """Two prosumers with storage, one response and one rebound interval."""
    return build_scenario(N=2, T=2, r=[1.5, -1.0])


@pytest.fixture
def game(scenario):
    return assemble(scenario)


@pytest.fixture
def flat_scenario():
    """One storage-free prosumer, no request: demand is fixed."""
    return build_scenario(N=1, T=1, storage=False, demand=3.0, solar=1.0)


@pytest.fixture
def example_dir():
    return EXAMPLE_DIR
