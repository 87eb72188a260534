import math

import numpy as np
import pytest

from entropic_pricer.errors import GammaOutOfRange
from entropic_pricer.market import build_tree, is_replicable, replicate, terminal_gains, tree_from_levels
from entropic_pricer.measures import minimal_entropy_measure, price_bounds, verify_martingale
from entropic_pricer.oracle import GridSpec, grid_dual_measure, grid_dual_price, grid_strategy_utility
from entropic_pricer.pricing import (buyer_price, buyer_value, dual_optimizer, indirect_utility,
                                     price_process, value_function, writer_price, writer_value)

from fixtures import binomial, random_strategy, trinomial, trinomial2, two_asset, up


def test_martingale_market_gives_minus_one():
    t = build_tree([
        {"id": 0, "parent": None, "prob": 1, "prices": [1, 1.0]},
        {"id": 1, "parent": 0, "prob": 0.5, "prices": [1, 0.8]},
        {"id": 2, "parent": 0, "prob": 0.5, "prices": [1, 1.2]},
    ])
    assert indirect_utility(t, 2.0) == pytest.approx(-1.0, abs=1e-15)
    assert np.allclose(value_function(t, 2.0, [0, 0]).strategy.positions, 0)


@pytest.mark.parametrize("make", [binomial, trinomial, trinomial2])
def test_utility_cash_shift(make):
    t = make()
    rng = np.random.default_rng(0)
    E, B = rng.uniform(-2, 2, (2, t.n_leaves))
    u = indirect_utility(t, 0.8, E, B)
    assert indirect_utility(t, 0.8, E, B + 2) == pytest.approx(math.exp(-1.6) * u, rel=1e-12)


def test_utility_matches_strategy_grid():
    t = trinomial()
    u = indirect_utility(t, 1.0, None, up(t))
    g = grid_strategy_utility(t, 1.0, None, up(t), GridSpec(1e-4))
    assert g <= u + 1e-15
    assert abs(u - g) <= 1e-6


def test_writer_price_matches_dual_grid():
    t = trinomial()
    w = writer_price(t, 1.0, None, up(t)).writer
    g = grid_dual_price(t, 1.0, None, up(t), GridSpec(1e-4))
    assert g <= w + 1e-15
    assert abs(w - g) <= 1e-6


def test_dual_optimizer_matches_grid_argmax():
    t = trinomial()
    q = dual_optimizer(t, 1.0, None, up(t)).leaf_prob
    qg = grid_dual_measure(t, 1.0, None, up(t), GridSpec(1e-4))
    assert np.abs(q - qg).max() <= 1e-5


def test_replicable_claim_has_its_cost_as_price():
    t = trinomial2()
    rng = np.random.default_rng(1)
    B = 0.4 + terminal_gains(t, random_strategy(t, rng))
    for gamma in (0.1, 1.0, 10.0):
        E = rng.uniform(-3, 3, t.n_leaves)
        q = writer_price(t, gamma, E, B)
        assert q.writer == pytest.approx(0.4, abs=1e-9)
        assert q.buyer == pytest.approx(0.4, abs=1e-9)


def test_selling_own_endowment_is_unconditional_buy():
    t = trinomial2()
    E = np.random.default_rng(2).uniform(-3, 3, t.n_leaves)
    assert writer_value(t, 1.5, E, E) == pytest.approx(buyer_value(t, 1.5, None, E), abs=1e-12)


def test_buyer_examples():
    t = trinomial()
    assert buyer_value(t, 2.0, None, [3, 3, 3]) == pytest.approx(3.0, abs=1e-12)
    q = buyer_price(t, 1.0, None, up(t))
    assert q.buyer < q.writer
    b2 = binomial()
    q = buyer_price(b2, 1.0, None, up(b2))
    assert q.buyer == pytest.approx(q.writer, abs=1e-12)
    q0 = minimal_entropy_measure(t).measure
    assert buyer_value(t, 1e-5, None, up(t)) == pytest.approx(q0.expectation(up(t)), abs=1e-4)


def test_quote_fields_and_bounds():
    t = trinomial()
    q = writer_price(t, 1.0, None, up(t), claim_name="up", endowment_name="zero", with_bounds=True)
    d = q.as_dict()
    assert set(d) == {"gamma", "claim", "endowment", "writer", "buyer", "dual_measure_id", "bounds"}
    lo, hi = q.bounds
    assert lo <= q.buyer <= q.writer <= hi
    assert q.buyer == pytest.approx(-writer_value(t, 1.0, None, -up(t)), abs=1e-10)


def test_gamma_range():
    t = trinomial()
    with pytest.raises(GammaOutOfRange):
        writer_value(t, 0.0, None, up(t))
    with pytest.raises(GammaOutOfRange):
        writer_value(t, 2e6, None, up(t))


def test_price_process_examples():
    t = trinomial2()
    rng = np.random.default_rng(3)
    theta = random_strategy(t, rng)
    from entropic_pricer.market import gains_process

    B = 0.9 + terminal_gains(t, theta)
    E = rng.uniform(-2, 2, t.n_leaves)
    nu = price_process(t, 1.2, E, B)
    assert np.allclose(nu, 0.9 + gains_process(t, theta), atol=1e-9)
    assert np.allclose(price_process(t, 1.2, E, np.full(t.n_leaves, 2.0)), 2.0, atol=1e-12)
    # dynamic consistency: the value at each first-period node is a one-shot price on its subtree
    C = up(t)
    nu = price_process(t, 1.0, None, C)
    assert nu[0] == pytest.approx(writer_value(t, 1.0, None, C), abs=1e-12)
    sub = tree_from_levels([1.2], [(0.3, [0.85]), (0.45, [1.0]), (0.25, [1.2])], horizon=1)
    assert nu[3] == pytest.approx(writer_value(sub, 1.0, None, C[6:]), abs=1e-10)
    assert np.allclose(nu[t.first_leaf:], C)


def test_dual_optimizer_examples():
    t = trinomial2()
    rng = np.random.default_rng(4)
    q0 = minimal_entropy_measure(t).measure.leaf_prob
    zero = np.zeros(t.n_leaves)
    assert np.allclose(dual_optimizer(t, 1.0, zero, zero).leaf_prob, q0, atol=1e-14)
    E = 0.3 + terminal_gains(t, random_strategy(t, rng))
    B = rng.uniform(-3, 3, t.n_leaves)
    assert np.allclose(dual_optimizer(t, 1.0, E, B).leaf_prob,
                       dual_optimizer(t, 1.0, None, B).leaf_prob, atol=1e-9)
    # log density against P_{gamma B - gamma E} is affine in the optimal gains
    gamma, E = 1.4, rng.uniform(-3, 3, t.n_leaves)
    q = dual_optimizer(t, gamma, E, B)
    assert verify_martingale(t, q)
    vf = value_function(t, gamma, E - B)
    g = terminal_gains(t, vf.strategy)
    c = gamma * (B - E)
    logd = np.log(q.leaf_prob) - (c + np.log(t.leaf_prob))
    resid = logd + gamma * g
    assert np.ptp(resid) <= 1e-8


CLAIM_TREES = [trinomial, trinomial2]


@pytest.mark.parametrize("make", CLAIM_TREES)
def test_cash_and_replication_invariance(make):
    t = make()
    rng = np.random.default_rng(5)
    for _ in range(20):
        gamma = rng.uniform(0.2, 3)
        E, B = rng.uniform(-5, 5, (2, t.n_leaves))
        w = writer_value(t, gamma, E, B)
        assert writer_value(t, gamma, E, B + 1.7) == pytest.approx(w + 1.7, abs=1e-9)
        G = terminal_gains(t, random_strategy(t, rng))
        assert writer_value(t, gamma, E, B + G) == pytest.approx(w, abs=1e-9)


@pytest.mark.parametrize("make", CLAIM_TREES)
def test_convexity(make):
    t = make()
    rng = np.random.default_rng(6)
    for _ in range(20):
        E, B1, B2 = rng.uniform(-5, 5, (3, t.n_leaves))
        w1, w2 = writer_value(t, 1.0, E, B1), writer_value(t, 1.0, E, B2)
        for lam in np.linspace(0.1, 0.9, 9):
            mix = writer_value(t, 1.0, E, lam * B1 + (1 - lam) * B2)
            assert mix <= lam * w1 + (1 - lam) * w2 + 1e-9


@pytest.mark.parametrize("make", CLAIM_TREES)
def test_conditional_as_difference_of_unconditional(make):
    t = make()
    rng = np.random.default_rng(7)
    for _ in range(20):
        gamma = rng.uniform(0.2, 3)
        E, B = rng.uniform(-5, 5, (2, t.n_leaves))
        lhs = writer_value(t, gamma, E, B)
        rhs = writer_value(t, gamma, None, B - E) - writer_value(t, gamma, None, -E)
        assert lhs == pytest.approx(rhs, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 5.0])
def test_scaling(alpha):
    t = trinomial2()
    rng = np.random.default_rng(8)
    for _ in range(10):
        B = rng.uniform(-5, 5, t.n_leaves)
        gamma = rng.uniform(0.2, 2)
        lhs = alpha * writer_value(t, alpha * gamma, None, B)
        rhs = writer_value(t, gamma, None, alpha * B)
        assert lhs == pytest.approx(rhs, abs=1e-9 * max(1, abs(rhs)))


def test_inf_convolution_subadditivity_and_equality():
    t = trinomial2()
    rng = np.random.default_rng(9)
    g1, g2 = 0.7, 1.9
    gt = 1 / (1 / g1 + 1 / g2)
    for _ in range(10):
        B1, B2 = rng.uniform(-5, 5, (2, t.n_leaves))
        lhs = writer_value(t, g1, None, B1) + writer_value(t, g2, None, B2)
        rhs = writer_value(t, gt, None, B1 + B2)
        assert lhs >= rhs - 1e-9
        assert lhs - rhs > 1e-8  # generic pair: not risk equivalent after scaling
    # equality when (g1/gt) B1 ~ (g2/gt) B2
    X = rng.uniform(-5, 5, t.n_leaves)
    G = terminal_gains(t, random_strategy(t, rng))
    B1 = (gt / g1) * X
    B2 = (gt / g2) * (X + 0.5 + G)
    lhs = writer_value(t, g1, None, B1) + writer_value(t, g2, None, B2)
    rhs = writer_value(t, gt, None, B1 + B2)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_non_homogeneity():
    t = trinomial2()
    rng = np.random.default_rng(10)
    B = rng.uniform(-5, 5, t.n_leaves)
    w = writer_value(t, 1.0, None, B)
    for alpha in (2.0, -1.0):
        assert abs(writer_value(t, 1.0, None, alpha * B) - alpha * w) > 1e-8
    R = 0.2 + terminal_gains(t, random_strategy(t, rng))
    wr = writer_value(t, 1.0, None, R)
    for alpha in (2.0, -1.0):
        assert writer_value(t, 1.0, None, alpha * R) == pytest.approx(alpha * wr, abs=1e-9)


def test_unconditional_price_increasing_in_gamma():
    t = trinomial2()
    rng = np.random.default_rng(11)
    grid = [0.25, 0.5, 1, 2, 4]
    B = rng.uniform(-5, 5, t.n_leaves)
    vals = [writer_value(t, g, None, B) for g in grid]
    assert np.all(np.diff(vals) > 0)
    R = 0.2 + terminal_gains(t, random_strategy(t, rng))
    vals = [writer_value(t, g, None, R) for g in grid]
    assert np.ptp(vals) <= 1e-9


@pytest.mark.parametrize("make", CLAIM_TREES)
def test_gamma_limits(make):
    t = make()
    rng = np.random.default_rng(12)
    q0 = minimal_entropy_measure(t).measure
    for _ in range(5):
        E, B = rng.uniform(-5, 5, (2, t.n_leaves))
        assert abs(writer_value(t, 1e-5, E, B) - q0.expectation(B)) <= 1e-3
        lim = price_bounds(t, B - E)[1] + price_bounds(t, E)[0]
        assert abs(writer_value(t, 1e4, E, B) - lim) <= 1e-3


def test_lipschitz_bound():
    t = trinomial2()
    rng = np.random.default_rng(13)
    Bs = rng.uniform(-5, 5, (3, t.n_leaves))
    E = rng.uniform(-2, 2, t.n_leaves)
    for _ in range(20):
        a1, a2 = rng.uniform(-2, 2, (2, 3))
        diff = abs(writer_value(t, 1.3, E, a1 @ Bs) - writer_value(t, 1.3, E, a2 @ Bs))
        assert diff <= np.abs((a1 - a2) @ Bs).max() + 1e-12
        assert diff <= np.abs(a1 - a2).max() * len(Bs) * np.abs(Bs).max() + 1e-12


def test_two_asset_prices_consistent():
    t = two_asset()
    rng = np.random.default_rng(14)
    B = rng.uniform(-2, 2, t.n_leaves)
    q = writer_price(t, 1.0, None, B, with_bounds=True)
    assert q.bounds[0] - 1e-12 <= q.buyer <= q.writer <= q.bounds[1] + 1e-12
    assert not is_replicable(t, B)
    assert replicate(t, t.dS[t.first_leaf:, 0]) is not None
