import math

import numpy as np
import pytest

from entropic_pricer.errors import GridTooLarge, ValidationError
from entropic_pricer.market import build_tree
from entropic_pricer.oracle import (GridSpec, fd_derivatives, grid_dual_measure, grid_dual_price,
                                    grid_equilibrium, grid_strategy_utility)
from entropic_pricer.pricing import dual_optimizer, indirect_utility, writer_value

from fixtures import binomial, trinomial, two_asset, up


def test_grid_spec_validation():
    with pytest.raises(ValidationError):
        GridSpec(step=0)
    with pytest.raises(ValidationError):
        GridSpec(theta_range=(1.0, -1.0))


def test_grid_too_large():
    t = two_asset()
    with pytest.raises(GridTooLarge):
        grid_dual_price(t, 1.0, None, np.zeros(t.n_leaves), GridSpec(1e-5))
    with pytest.raises(GridTooLarge):
        grid_equilibrium(trinomial(), ((1.0, None), (1.0, None)), up(trinomial()), step=1e-9)


def test_complete_tree_is_exact():
    # one point in the polytope, and a martingale P puts the zero strategy on the grid
    t = build_tree([
        {"id": 0, "parent": None, "prob": 1, "prices": [1, 1.0]},
        {"id": 1, "parent": 0, "prob": 0.5, "prices": [1, 0.9]},
        {"id": 2, "parent": 0, "prob": 0.5, "prices": [1, 1.1]},
    ])
    B = np.array([1.0, -0.5])
    assert grid_dual_price(t, 2.0, None, B, GridSpec(1e-2)) == pytest.approx(
        writer_value(t, 2.0, None, B), abs=1e-12)
    b = binomial()
    assert grid_dual_price(b, 2.0, None, B, GridSpec(1e-4)) == pytest.approx(
        writer_value(b, 2.0, None, B), abs=1e-6)


def test_refinement_is_monotone():
    t = trinomial()
    vals = [grid_dual_price(t, 1.0, None, up(t), GridSpec(s)) for s in (1e-2, 1e-3, 1e-4)]
    exact = writer_value(t, 1.0, None, up(t))
    assert vals[0] <= vals[1] + 1e-14 <= vals[2] + 2e-14
    assert vals[2] <= exact + 1e-14
    assert exact - vals[2] <= 1e-6


def test_dual_measure_and_utility_are_consistent():
    t = trinomial()
    q = grid_dual_measure(t, 1.0, None, up(t), GridSpec(1e-4))
    assert np.abs(q - dual_optimizer(t, 1.0, None, up(t)).leaf_prob).max() <= 1e-3
    u = grid_strategy_utility(t, 1.0, None, up(t), GridSpec(1e-4))
    exact = indirect_utility(t, 1.0, None, up(t))
    assert u <= exact + 1e-14 and exact - u <= 1e-6


def test_two_dimensional_polytope():
    t = two_asset()
    rng = np.random.default_rng(0)
    B = rng.uniform(-1, 1, t.n_leaves)
    g = grid_dual_price(t, 1.0, None, B, GridSpec(2e-3, (-5.0, 5.0), 0.05))
    exact = writer_value(t, 1.0, None, B)
    assert g <= exact + 1e-12 and exact - g <= 1e-3


def test_fd_exact_on_quadratics():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -3.0])

    def fn(a):
        return a @ A @ a + b @ a

    a = np.array([0.3, -0.7])
    grad, hess = fd_derivatives(fn, a, 1e-3)
    assert np.allclose(grad, 2 * A @ a + b, atol=1e-9)
    assert np.allclose(hess, 2 * A, atol=1e-6)


def test_fd_error_is_second_order():
    def fn(a):
        return math.exp(a[0])

    errs = [abs(fd_derivatives(fn, [0.0], h)[1][0, 0] - 1.0) for h in (1e-1, 5e-2)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_grid_equilibrium_symmetric_agents_do_not_trade():
    t = trinomial()
    z = np.zeros(3)
    assert grid_equilibrium(t, ((1.0, z), (1.0, z)), up(t)) == pytest.approx(0, abs=1e-12)
    assert grid_equilibrium(t, ((1.0, up(t)), (1.0, z)), up(t)) == pytest.approx(0.5, abs=2e-4)
    with pytest.raises(ValidationError):
        grid_equilibrium(two_asset(), ((1.0, None), (1.0, None)), np.ones(5))
