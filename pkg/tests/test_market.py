"""
Tests for the market model.

This module contains tests for scenario validation and the closed-form
reward, price, cost and residual functions.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.exceptions import ScenarioValidationError
from src.models.market import (
    E,
    K,
    N_BLOCKS,
    P,
    PC,
    PDC,
    TT,
    Y,
    FollowerDecision,
    IntervalClass,
    LeaderDecision,
    ProsumerSpec,
    all_phi,
    build_ledger,
    classify_intervals,
    collective,
    constraint_residuals,
    eval_dso_cost,
    eval_phi_R,
    eval_pi_B,
    eval_pi_R,
    eval_price,
    eval_prosumer_cost,
    validate_scenario,
)
from tests.conftest import build_scenario


@pytest.fixture
def reward_scenario():
    """p_bar = 10, beta = 4, N = 3 and a response request of 5."""
    return build_scenario(N=3, T=1, r=[5.0], p_bar=10.0, beta=4.0, mu=0.5)


def test_pi_R_branches(reward_scenario):
    """Test the aggregate response reward below and above the request."""
    assert eval_pi_R([3.0], reward_scenario)[0] == pytest.approx(30.0)
    assert eval_pi_R([8.0], reward_scenario)[0] == pytest.approx(44.0)

    rebound = reward_scenario.model_copy(update={"r": [-1.0]})
    assert eval_pi_R([3.0], rebound)[0] == 0.0


def test_phi_R_branches(reward_scenario):
    """Test the incentive base of one prosumer given the others' response."""
    assert eval_phi_R(0, [2.0], [2.0], reward_scenario)[0] == pytest.approx(20.0)
    assert eval_phi_R(0, [4.0], [2.0], reward_scenario)[0] == pytest.approx(36.0)

    quiet = reward_scenario.model_copy(update={"r": [0.0]})
    assert eval_phi_R(0, [2.0], [0.0], quiet)[0] == 0.0


def test_phi_R_rejects_bad_input(reward_scenario):
    """Test index and sign checks of the incentive base."""
    with pytest.raises(ValueError):
        eval_phi_R(3, [1.0], [0.0], reward_scenario)
    with pytest.raises(ValueError):
        eval_phi_R(0, [-1.0], [0.0], reward_scenario)


def test_reward_consistency_random():
    """Test that the incentive bases always add up to the aggregate reward."""
    rng = np.random.default_rng(7)
    bases = {N: build_scenario(N=N, T=24) for N in range(1, 6)}
    for _ in range(2000):
        N = int(rng.integers(1, 6))
        p_bar = float(rng.uniform(1.0, 20.0))
        scen = bases[N].model_copy(
            update={
                "p_bar": p_bar,
                "beta": float(rng.uniform(p_bar / N, p_bar)),
                "r": (rng.uniform(-1.0, 1.0, 24) * rng.uniform(0.0, 10.0)).tolist(),
            }
        )
        y = rng.uniform(0.0, 5.0, size=(N, 24))
        total = y.sum(axis=0)
        phi = np.stack([eval_phi_R(i, y[i], total - y[i], scen) for i in range(N)])
        np.testing.assert_allclose(
            phi.sum(axis=0), eval_pi_R(total, scen), rtol=1e-12, atol=1e-12
        )


@pytest.mark.slow
def test_reward_consistency_full_size():
    """Test the incentive split on 10^4 draws of N, T, prices and responses."""
    rng = np.random.default_rng(11)
    bases = {(N, T): build_scenario(N=N, T=T) for N in range(1, 6) for T in range(1, 25)}
    for _ in range(10_000):
        N, T = int(rng.integers(1, 6)), int(rng.integers(1, 25))
        p_bar = float(rng.uniform(1.0, 20.0))
        scen = bases[N, T].model_copy(
            update={
                "p_bar": p_bar,
                "beta": float(rng.uniform(p_bar / N, p_bar)),
                "r": (rng.uniform(-1.0, 1.0, T) * rng.uniform(0.0, 10.0)).tolist(),
            }
        )
        y = rng.uniform(0.0, 5.0, size=(N, T))
        total = y.sum(axis=0)
        phi = np.stack([eval_phi_R(i, y[i], total - y[i], scen) for i in range(N)])
        np.testing.assert_allclose(
            phi.sum(axis=0), eval_pi_R(total, scen), rtol=1e-12, atol=1e-12
        )


def test_pi_B():
    """Test the rebound reward."""
    scen = build_scenario(N=1, T=1, r=[-4.0], p_tilde=3.0)
    assert eval_pi_B([-2.0], scen)[0] == pytest.approx(6.0)
    assert eval_pi_B([0.0], scen)[0] == 0.0

    response = scen.model_copy(update={"r": [2.0]})
    assert eval_pi_B([0.0], response)[0] == 0.0

    with pytest.raises(ValueError):
        eval_pi_B([1.0], scen)


def test_price_map():
    """Test the affine pricing map."""
    scen = build_scenario(N=1, T=1, c1=[0.1])
    assert eval_price([10.0], scen, [2.0, 0.0])[0] == pytest.approx(3.0)

    scen = build_scenario(N=1, T=1, c1=[0.05])
    assert eval_price([40.0], scen, [1.5, 0.0])[0] == pytest.approx(3.5)

    flat = build_scenario(N=1, T=1, c1=[0.0])
    assert eval_price([123.0], flat, [2.0, 0.0])[0] == pytest.approx(2.0)

    with pytest.raises(ValueError):
        eval_price([1.0], flat, [2.0])


def test_dso_cost_examples():
    """Test the DSO cost on hand-computed points."""
    scen = build_scenario(N=1, T=1, c1=[0.1], c0_lo=[0.0])
    x = np.zeros(N_BLOCKS)
    assert eval_dso_cost([2.5, 0.4], x, scen) == 0.0

    x[P] = 10.0
    assert eval_dso_cost([2.0, 0.0], x, scen) == pytest.approx(-30.0)


def test_prosumer_cost_examples():
    """Test the prosumer cost on hand-computed points."""
    scen = build_scenario(N=1, T=1, c1=[0.1], delta=0.01)
    x = np.zeros(N_BLOCKS)
    assert eval_prosumer_cost(0, x, np.zeros((0, N_BLOCKS)), [2.0, 0.0], scen) == 0.0

    x[P] = 10.0
    x[PC] = 1.0
    cost = eval_prosumer_cost(0, x, np.zeros((0, N_BLOCKS)), [2.0, 0.0], scen)
    assert cost == pytest.approx(30.01)


def test_costs_match_ledger_recomputation():
    """Test both costs against a term-by-term recomputation."""
    rng = np.random.default_rng(3)
    scen = build_scenario(N=2, T=2, r=[1.5, -1.0])
    T = scen.T
    xs = rng.uniform(0.0, 2.0, size=(2, N_BLOCKS, T))
    xs[:, K, :] *= -1.0
    xs[:, TT, :] *= -1.0
    z0 = np.concatenate([rng.uniform(1.0, 3.0, T), rng.uniform(0.0, 1.0, T)])
    c0, alpha = z0[:T], z0[T:]
    c1 = np.asarray(scen.c1)

    ptot = xs[:, P, :].sum(axis=0)
    price = c1 * ptot + c0
    expected = -price @ ptot + (1 - alpha) @ xs[:, TT, :].sum(axis=0)
    expected += scen.p_tilde * xs[:, K, 1].sum()
    assert eval_dso_cost(z0, xs, scen) == pytest.approx(expected, abs=1e-10)

    x0 = xs[0]
    expected_0 = price @ x0[P] + scen.delta * (x0[PC].sum() + x0[PDC].sum())
    expected_0 += scen.mu * x0[Y].sum() + alpha @ x0[TT]
    assert eval_prosumer_cost(0, x0, xs[1:], z0, scen) == pytest.approx(expected_0, abs=1e-10)


def test_epigraph_and_raw_costs_agree():
    """Test that t = -phi reproduces the branch-formula costs."""
    rng = np.random.default_rng(11)
    scen = build_scenario(N=3, T=4, r=[2.0, 0.0, -1.0, 3.0])
    for _ in range(20):
        xs = rng.uniform(0.0, 2.0, size=(3, N_BLOCKS, 4))
        xs[:, Y, :] *= (np.asarray(scen.r) > 0)
        xs[:, TT, :] = -all_phi(xs, scen)
        z0 = np.concatenate([rng.uniform(1.0, 3.0, 4), rng.uniform(0.0, 1.0, 4)])
        assert eval_dso_cost(z0, xs, scen) == pytest.approx(
            eval_dso_cost(z0, xs, scen, epigraph=False), abs=1e-10
        )
        for i in range(3):
            others = np.delete(xs, i, axis=0)
            assert eval_prosumer_cost(i, xs[i], others, z0, scen) == pytest.approx(
                eval_prosumer_cost(i, xs[i], others, z0, scen, epigraph=False), abs=1e-10
            )


def test_full_share_leaves_no_response_reward():
    """Test that alpha = 1 removes the response reward from the DSO cost."""
    scen = build_scenario(N=2, T=2, r=[1.5, 2.0])
    rng = np.random.default_rng(5)
    xs = rng.uniform(0.0, 2.0, size=(2, N_BLOCKS, 2))
    bare = xs.copy()
    bare[:, Y, :] = 0.0
    bare[:, TT, :] = 0.0
    z0 = np.array([2.0, 2.5, 1.0, 1.0])
    assert eval_dso_cost(z0, xs, scen) == pytest.approx(eval_dso_cost(z0, bare, scen))
    assert eval_dso_cost(z0, xs, scen, epigraph=False) == pytest.approx(
        eval_dso_cost(z0, bare, scen, epigraph=False)
    )


def test_one_step_storage_dynamics():
    """Test that a full-power charge from empty is exactly feasible."""
    scen = build_scenario(N=1, T=1)
    spec = scen.prosumers[0].model_copy(update={"e0": 0.0})
    scen = scen.model_copy(update={"prosumers": [spec]})
    x = np.zeros(N_BLOCKS)
    x[PC] = spec.p_max
    x[E] = scen.dt * spec.eta_c * spec.p_max
    x[P] = spec.d[0] - spec.s[0] + spec.p_max
    report = constraint_residuals(x, scen)
    assert report.storage[0][0] == 0.0
    assert report.max_violation() == 0.0


def test_feasible_point_has_no_violation(scenario):
    """Test residuals of a hand-built feasible point."""
    xs = np.zeros((2, N_BLOCKS, 2))
    for i, spec in enumerate(scenario.prosumers):
        xs[i, E, :] = spec.e0
        xs[i, P, :] = np.asarray(spec.d) - np.asarray(spec.s)
    xs[0, Y, 0] = 0.5
    xs[0, TT, 0] = -1.0
    xs[1, K, 1] = -0.5
    xs[1, P, 1] -= 0.5
    report = constraint_residuals(xs, scenario)
    assert report.max_equality() == 0.0
    assert report.max_inequality() <= 0.0


def test_infeasible_point_matches_naive_residuals(scenario):
    """Test residuals of a random point against a per-constraint loop."""
    rng = np.random.default_rng(2)
    xs = rng.uniform(-1.0, 3.0, size=(2, N_BLOCKS, 2))
    report = constraint_residuals(xs, scenario)
    for i, spec in enumerate(scenario.prosumers):
        for tau in range(2):
            e_prev = spec.e0 if tau == 0 else xs[i, E, tau - 1]
            storage = xs[i, E, tau] - e_prev - scenario.dt * (
                spec.eta_c * xs[i, PC, tau] - spec.eta_dc * xs[i, PDC, tau]
            )
            assert report.storage[i][tau] == pytest.approx(storage)
            need = spec.d[tau] - spec.s[tau] + xs[i, PC, tau] - xs[i, PDC, tau]
            assert report.demand[i][tau] == pytest.approx(need - (xs[i, P, tau] - xs[i, K, tau]))
            assert report.bounds["e_upper"][i][tau] == pytest.approx(xs[i, E, tau] - spec.e_max)
    for tau in range(2):
        load = xs[:, P, tau].sum() + xs[:, Y, tau].sum() - xs[:, K, tau].sum()
        g, r = scenario.g[tau], scenario.r[tau]
        assert report.coupling[tau] == pytest.approx(load - max(g, g - r))
    # r = [1.5, -1.0]: y and t are pinned in the rebound interval, k in the response one
    for i in range(2):
        assert report.y_mask[i] == [0.0, xs[i, Y, 1]]
        assert report.t_mask[i] == [0.0, xs[i, TT, 1]]
        assert report.k_mask[i] == [xs[i, K, 0], 0.0]
    assert report.rebound_cap[1] == pytest.approx(-xs[:, K, 1].sum() + scenario.r[1])
    assert report.max_violation() > 0


@pytest.mark.parametrize("N, beta", [(3, 4.0), (2, 5.0), (1, 10.0)])
def test_rewards_are_continuous_at_the_request(N, beta):
    """Test that both reward branches meet at the request level."""
    scen = build_scenario(N=N, T=1, r=[5.0], p_bar=10.0, beta=beta)
    eps = 1e-9
    at = eval_pi_R([5.0], scen)[0]
    assert at == pytest.approx(50.0)
    assert eval_pi_R([5.0 - eps], scen)[0] == pytest.approx(at, abs=1e-6)
    assert eval_pi_R([5.0 + eps], scen)[0] == pytest.approx(at, abs=1e-6)

    # Kink of prosumer 0 sits where the others leave 3 kW of the request
    others = [2.0]
    at = eval_phi_R(0, [3.0], others, scen)[0]
    assert eval_phi_R(0, [3.0 - eps], others, scen)[0] == pytest.approx(at, abs=1e-6)
    assert eval_phi_R(0, [3.0 + eps], others, scen)[0] == pytest.approx(at, abs=1e-6)


def test_reward_saturates_beyond_the_request():
    """Test the aggregate reward above the request for the smallest and a larger beta."""
    levels = [5.0, 6.0, 8.0, 12.0]
    flat = build_scenario(N=2, T=1, r=[5.0], p_bar=10.0, beta=5.0)
    values = [eval_pi_R([y], flat)[0] for y in levels]
    np.testing.assert_allclose(values, 50.0, rtol=1e-12)

    steep = flat.model_copy(update={"beta": 7.0})
    values = [eval_pi_R([y], steep)[0] for y in levels]
    assert values[0] == pytest.approx(50.0)
    assert np.all(np.diff(values) < 0)


def test_offsetting_mask_violations_are_reported():
    """Test that nonzero y and t outside a response interval cannot cancel."""
    scen = build_scenario(N=1, T=1, r=[0.0], storage=False)
    x = np.zeros(N_BLOCKS)
    x[P] = 1.5
    x[Y] = 1.0
    x[TT] = -1.0
    report = constraint_residuals(x, scen)
    assert report.y_mask == [[1.0]]
    assert report.t_mask == [[-1.0]]
    assert report.k_mask == [[0.0]]
    assert report.max_equality() == 1.0
    assert report.max_violation() > 0


def test_solar_above_demand_is_rejected():
    """Test that s > d names the prosumer and the interval."""
    with pytest.raises(ValidationError, match="b1: solar 3.0 exceeds demand 2.0 at interval 1"):
        ProsumerSpec(prosumer_id="b1", d=[2.0, 2.0], s=[1.0, 3.0], e_max=1.0, p_max=1.0)


def test_scenario_validation_lists_every_error():
    """Test that all violated invariants are reported together."""
    scen = build_scenario(N=2, T=2)
    bad = scen.model_copy(update={"beta": 1.0, "c0_lo": [4.0, 1.0], "g": [-1.0, 1.0]})
    with pytest.raises(ScenarioValidationError) as excinfo:
        validate_scenario(bad)
    text = " ".join(excinfo.value.errors)
    assert "beta" in text
    assert "c0_hi" in text
    assert "g: negative capacity" in text
    assert len(excinfo.value.errors) == 3

    with pytest.raises(ValidationError, match="r: expected 2 entries"):
        build_scenario(N=1, T=2, r=[1.0])

    twins = [scen.prosumers[0], scen.prosumers[0]]
    with pytest.raises(ScenarioValidationError, match="unique"):
        validate_scenario(scen.model_copy(update={"prosumers": twins}))


def test_scenario_warnings():
    """Test the soft invariants."""
    assert build_scenario().warnings() == []
    notes = build_scenario(N=2, beta=12.0, mu=2.0).warnings()
    assert any("beta" in note for note in notes)
    assert any("mu" in note for note in notes)


def test_storage_free_prosumer_is_valid():
    """Test that e_max = 0 or p_max = 0 marks a prosumer without storage."""
    spec = ProsumerSpec(d=[1.0], s=[0.0], e_max=0.0, p_max=0.0)
    assert not spec.has_storage
    assert ProsumerSpec(d=[1.0], s=[0.0], e_max=1.0, p_max=1.0).has_storage


def test_classify_intervals():
    """Test the three interval classes."""
    scen = build_scenario(N=1, T=3, r=[1.0, 0.0, -1.0])
    assert classify_intervals(scen) == [
        IntervalClass.RESPONSE,
        IntervalClass.NONE,
        IntervalClass.REBOUND,
    ]
    quiet = build_scenario(N=1, T=3)
    assert set(classify_intervals(quiet)) == {IntervalClass.NONE}


def test_decision_vectors(scenario):
    """Test leader and follower vector conversions."""
    leader = LeaderDecision(c0=[1.0, 2.0], alpha=[0.5, 1.0])
    assert np.array_equal(leader.to_vector(), [1.0, 2.0, 0.5, 1.0])
    assert LeaderDecision.from_vector(leader.to_vector()) == leader
    assert leader.in_box(scenario)
    assert not LeaderDecision(c0=[0.5, 2.0], alpha=[0.5, 1.0]).in_box(scenario)

    x = np.arange(N_BLOCKS * 2, dtype=float)
    follower = FollowerDecision.from_vector(x)
    assert follower.p == [0.0, 1.0]
    assert follower.t == [12.0, 13.0]
    assert np.array_equal(follower.to_vector(), x)
    assert FollowerDecision.zeros(2).to_vector().sum() == 0.0

    stacked = collective([follower, FollowerDecision.zeros(2)], scenario)
    assert stacked.shape == (2, N_BLOCKS, 2)
    with pytest.raises(ValueError):
        collective(np.zeros(5), scenario)


def test_build_ledger(scenario):
    """Test the ledger invariants."""
    rng = np.random.default_rng(4)
    xs = rng.uniform(0.0, 2.0, size=(2, N_BLOCKS, 2))
    xs[:, K, :] *= -1.0
    z0 = np.array([2.0, 2.0, 0.25, 0.75])
    ledger = build_ledger(z0, xs, scenario)
    np.testing.assert_allclose(np.sum(ledger.phi, axis=0), ledger.pi_R, rtol=1e-12)
    np.testing.assert_allclose(ledger.dso_net, 0.75 * np.asarray(ledger.pi_R))
    assert ledger.pi_R[1] == 0.0
    assert ledger.pi_B[0] == 0.0
    assert ledger.pi_B[1] == pytest.approx(-scenario.p_tilde * xs[:, K, 1].sum())
    ptot = xs[:, P, :].sum(axis=0)
    np.testing.assert_allclose(ledger.energy_revenue, (0.1 * ptot + 2.0) * ptot)
