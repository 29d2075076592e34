import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import chain
from transactive.agents import BuyerParams, SellerParams, total_welfare
from transactive.exceptions import GridTooLargeError, InfeasibleMarketError, PowerFlowDivergence
from transactive.oracle import (
    CentralizedClearing,
    brute_force_clear,
    centralized_clear,
    excess_supply,
    gauss_seidel_power_flow,
)
from transactive.powerflow import solve_power_flow
from transactive.scenario import Scenario, chain_network, generate_scenario


def market(sellers, buyers):
    n = len(sellers) + len(buyers)
    sellers = [SellerParams(*s, node=i + 1) for i, s in enumerate(sellers)]
    buyers = [BuyerParams(*b, node=len(sellers) + j + 1) for j, b in enumerate(buyers)]
    return Scenario(chain_network(n), tuple(sellers), tuple(buyers))


ONE_BY_ONE = market([(0.5, 5.0, 0.0, 0.0, 10.0)], [(15.0, 0.5, 0.0, 20.0)])


def test_centralized_one_by_one():
    lam, S, D = centralized_clear(ONE_BY_ONE)
    assert lam == pytest.approx(10.0, abs=1e-6)
    np.testing.assert_allclose(S, [5.0], atol=1e-6)
    np.testing.assert_allclose(D, [5.0], atol=1e-6)


def test_centralized_symmetric_pair_clears_at_crossing():
    # marginal cost 2 + 2s, marginal utility 12 - 2d: they cross at 2.5 kW, 7 $/kWh
    lam, S, D = centralized_clear(market([(1.0, 2.0, 0.0, 0.0, 10.0)], [(12.0, 1.0, 0.0, 10.0)]))
    assert lam == pytest.approx(7.0, abs=1e-6)
    np.testing.assert_allclose(S, [2.5], atol=1e-6)


def test_centralized_infeasible():
    scenario = market([(0.5, 5.0, 0.0, 6.0, 8.0)], [(15.0, 0.5, 0.0, 4.0)])
    with pytest.raises(InfeasibleMarketError):
        centralized_clear(scenario)


def test_brute_force_one_by_one():
    welfare, S, D = brute_force_clear(ONE_BY_ONE, 0.01)
    np.testing.assert_allclose(S, [5.0])
    np.testing.assert_allclose(D, [5.0])
    # U(5) - C(5) = 62.5 - 37.5
    assert welfare == pytest.approx(25.0, abs=1e-9)


def test_brute_force_degenerate_bounds():
    welfare, S, D = brute_force_clear(market([(0.5, 5.0, 0.0, 3.0, 3.0)], [(15.0, 0.5, 3.0, 3.0)]))
    np.testing.assert_array_equal(S, [3.0])
    np.testing.assert_array_equal(D, [3.0])


def test_brute_force_infeasible_and_cap():
    with pytest.raises(InfeasibleMarketError):
        brute_force_clear(market([(0.5, 5.0, 0.0, 6.0, 8.0)], [(15.0, 0.5, 0.0, 4.0)]))
    big = market([(0.5, 5.0, 0.0, 0.0, 10.0)] * 3, [(15.0, 0.5, 0.0, 20.0)] * 2)
    with pytest.raises(GridTooLargeError):
        brute_force_clear(big, 0.01)


def test_two_by_two_centralized_matches_brute_force():
    scenario = generate_scenario(2, 2, seed=11)
    _, S, D = centralized_clear(scenario)
    exact = total_welfare(scenario.sellers, scenario.buyers, S, D)
    grid, _, _ = brute_force_clear(scenario, 0.01)
    assert grid <= exact + 1e-9
    assert exact - grid <= 1e-3


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000),
    st.floats(0.0, 25.0), st.floats(0.0, 25.0),
)
def test_excess_supply_is_nondecreasing(n_s, n_b, seed, p, q):
    scenario = generate_scenario(n_s, n_b, seed, power_bounds=(0.0, 4.0))
    lo, hi = sorted((p, q))
    assert excess_supply(scenario, lo) <= excess_supply(scenario, hi) + 1e-12


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_grid_never_beats_continuous_optimum(seed):
    scenario = generate_scenario(1, 2, seed, power_bounds=(0.0, 4.0))
    # the default bisection tolerances leave ~1e-5 of welfare on the table
    _, S, D = centralized_clear(scenario, tol_kw=1e-13, tol_price=1e-15)
    exact = total_welfare(scenario.sellers, scenario.buyers, S, D)
    grid, _, _ = brute_force_clear(scenario, 0.01)
    assert grid <= exact + 1e-9


def test_gauss_seidel_two_bus_closed_form():
    sol = gauss_seidel_power_flow(chain([0.01 + 0j]), [10.0])
    assert round(abs(sol.voltages[0]), 6) == 0.998999


def test_gauss_seidel_zero_injection_is_flat():
    sol = gauss_seidel_power_flow(chain([0.01 + 0.01j] * 4), np.zeros(4))
    np.testing.assert_allclose(sol.voltages, np.ones(4), atol=1e-12)


def test_gauss_seidel_random_ten_bus():
    from helpers import random_feeder

    rng = np.random.default_rng(10)
    net = random_feeder(rng, 10)
    P = rng.uniform(-3.0, 3.0, 10)
    gs, dlf = gauss_seidel_power_flow(net, P), solve_power_flow(net, P)
    assert np.abs(gs.voltages - dlf.voltages).max() <= 1e-8
    np.testing.assert_allclose(gs.line_flows, dlf.line_flows, atol=1e-5)


def test_gauss_seidel_sweep_cap():
    with pytest.raises(PowerFlowDivergence):
        gauss_seidel_power_flow(chain([0.01 + 0.01j] * 20), np.full(20, 2.0), max_sweeps=5)


def test_centralized_estimator():
    est = CentralizedClearing().fit(ONE_BY_ONE)
    assert est.lambda_ == pytest.approx(10.0, abs=1e-6)
    assert est.welfare_ == pytest.approx(25.0, abs=1e-6)
    assert est.score(ONE_BY_ONE) == pytest.approx(25.0, abs=1e-6)
