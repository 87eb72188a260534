from dataclasses import replace

import numpy as np
import pytest

from entropic_pricer.agreement import is_agreeable
from entropic_pricer.equilibrium import (check_non_replicable, demand, excess_objective, solve_pepq,
                                         verify_clearing)
from entropic_pricer.errors import ReplicableCombination
from entropic_pricer.market import terminal_gains
from entropic_pricer.measures import price_bounds, tilted_measure
from entropic_pricer.oracle import grid_equilibrium

from fixtures import product_tree, random_strategy, trinomial, trinomial2, two_asset, up

ZERO3 = np.zeros(3)


def _agents(t, rng):
    E1, E2 = rng.uniform(-2, 2, (2, t.n_leaves))
    return (rng.uniform(0.5, 2), E1), (rng.uniform(0.5, 2), E2)


@pytest.mark.parametrize("make,n", [(trinomial2, 1), (trinomial2, 2), (trinomial2, 3), (two_asset, 2)])
def test_solution_is_unique_and_clears(make, n):
    t = make()
    rng = np.random.default_rng(n)
    a1, a2 = _agents(t, rng)
    B = rng.uniform(-2, 2, (n, t.n_leaves))
    ref = solve_pepq(t, a1, a2, B)
    assert ref.clearing_ok and ref.clearing_residual <= 1e-9
    assert verify_clearing(ref, t, (a1, a2), B)
    for _ in range(5):
        other = solve_pepq(t, a1, a2, B, start=rng.uniform(-2, 2, n))
        assert np.abs(other.a_hat - ref.a_hat).max() <= 1e-8
    bumped = replace(ref, a_hat=ref.a_hat + 1e-3)
    assert not verify_clearing(bumped, t, (a1, a2), B)


def test_symmetric_example():
    t = trinomial()
    res = solve_pepq(t, (1.0, up(t)), (1.0, ZERO3), up(t))
    assert res.a_hat[0] == pytest.approx(0.5, abs=1e-9)
    assert set(res.as_dict()) == {"a_hat", "p_hat", "grad_norm", "iters", "clearing_ok"}


def test_matches_grid_minimiser():
    t = trinomial()
    rng = np.random.default_rng(7)
    for _ in range(3):
        E1 = rng.uniform(-1, 1, 3)
        a1, a2 = (rng.uniform(0.5, 2), E1), (rng.uniform(0.5, 2), ZERO3)
        B = rng.uniform(-1, 1, 3)
        res = solve_pepq(t, a1, a2, B)
        if abs(res.a_hat[0]) >= 2.5:
            continue
        assert abs(grid_equilibrium(t, (a1, a2), B) - res.a_hat[0]) <= 2e-4


def test_zero_trade_iff_equal_marginal_prices():
    t = trinomial2()
    rng = np.random.default_rng(8)
    for _ in range(10):
        a1, a2 = _agents(t, rng)
        B = rng.uniform(-2, 2, t.n_leaves)
        m1 = tilted_measure(t, -a1[0] * a1[1]).expectation(B)
        m2 = tilted_measure(t, -a2[0] * a2[1]).expectation(B)
        res = solve_pepq(t, a1, a2, B)
        assert abs(res.a_hat[0]) > 1e-8 and abs(m1 - m2) > 1e-10
    # proportional endowments: identical marginal measures, so no trade at all
    E = rng.uniform(-2, 2, t.n_leaves)
    a1, a2 = (1.0, E), (2.0, 0.5 * E)
    B = rng.uniform(-2, 2, t.n_leaves)
    res = solve_pepq(t, a1, a2, B)
    assert abs(res.a_hat[0]) <= 1e-9
    assert is_agreeable(t, a1, a2, res.a_hat[0] * B) == "weak"


def test_independent_claim_trades_at_expectation():
    t = product_tree()
    coin = np.array([0.0, 1.0, 0.0, 1.0])
    stock = np.array([0.0, 0.0, 1.0, 1.0])
    res = solve_pepq(t, (1.0, stock), (2.0, -stock), coin)
    assert res.p_hat[0] == pytest.approx(t.leaf_prob @ coin, abs=1e-9)


def test_demand_examples():
    t = trinomial()
    a1, a2 = (1.0, up(t)), (1.0, ZERO3)
    B = up(t)
    p_own = tilted_measure(t, -up(t)).expectation(B)
    assert demand(t, a1, B, p_own)[0] == pytest.approx(0, abs=1e-9)
    res = solve_pepq(t, a1, a2, B)
    assert demand(t, a1, B, res.p_hat)[0] == pytest.approx(res.a_hat[0], abs=1e-8)
    assert demand(t, a2, B, res.p_hat)[0] == pytest.approx(-res.a_hat[0], abs=1e-8)
    lo, hi = price_bounds(t, B)
    assert demand(t, a1, B, hi + 0.01) is None
    assert demand(t, a1, B, lo - 0.01) is None


def test_replicable_combination_rejected():
    t = trinomial2()
    rng = np.random.default_rng(9)
    B1 = rng.uniform(-1, 1, t.n_leaves)
    R = 0.5 + terminal_gains(t, random_strategy(t, rng))
    with pytest.raises(ReplicableCombination):
        check_non_replicable(t, [B1, B1 + 2 * R, R])
    with pytest.raises(ReplicableCombination):
        solve_pepq(t, (1.0, B1), (1.0, np.zeros(t.n_leaves)), R)


def test_excess_objective_is_coercive_and_bounded():
    t = trinomial2()
    rng = np.random.default_rng(10)
    a1, a2 = _agents(t, rng)
    B = rng.uniform(-2, 2, (2, t.n_leaves))
    for _ in range(5):
        d = rng.normal(size=2)
        d /= np.linalg.norm(d)
        vals = [excess_objective(t, a1, a2, B, m * d)[0] / m for m in (10.0, 40.0)]
        assert all(v > 0 for v in vals)
    res = solve_pepq(t, a1, a2, B)
    for k in range(2):
        lo, hi = price_bounds(t, B[k])
        assert lo < res.p_hat[k] < hi
