"""Price behaviour in the traded quantity.

For a vector of claims ``B`` and quantities ``a`` let ``w(a) = nu_w(a.B; gamma | E)``.
Its gradient is the expectation of ``B`` under ``Q^(gamma a.B - gamma E)`` and its
Hessian is ``gamma`` times the projected variance of ``B`` under the same measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClaim
from .hedging import projected_variance
from .market import is_replicable
from .agreement import _agent
from .pricing import buyer_value, check_gamma, dual_optimizer, writer_value

SEGMENT_TOL = 1e-10


def _claims(tree, claims):
    B = np.atleast_2d(np.asarray(claims, dtype=float))
    for row in B:
        tree.claim(row)
    return B


def _quantities(a, n):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (n,):
        raise ValueError(f"expected {n} quantities, got shape {a.shape}")
    return a


def price_gradient(tree, gamma, endowment, claims, a) -> np.ndarray:
    B = _claims(tree, claims)
    a = _quantities(a, len(B))
    q = dual_optimizer(tree, gamma, endowment, a @ B)
    return B @ q.leaf_prob


def price_hessian(tree, gamma, endowment, claims, a) -> np.ndarray:
    gamma = check_gamma(gamma)
    B = _claims(tree, claims)
    a = _quantities(a, len(B))
    q = dual_optimizer(tree, gamma, endowment, a @ B)
    return gamma * projected_variance(tree, q, B).matrix


def expand_price(tree, gamma, endowment, claims, a, eps) -> float:
    """Second-order approximation of ``nu_w(eps a.B; gamma | E)`` around zero."""
    B = _claims(tree, claims)
    a = _quantities(a, len(B))
    zero = np.zeros(len(B))
    g = price_gradient(tree, gamma, endowment, B, zero)
    H = price_hessian(tree, gamma, endowment, B, zero)
    return float(eps * a @ g + 0.5 * eps ** 2 * a @ H @ a)


@dataclass(frozen=True, eq=False)
class Expansion:
    a: np.ndarray
    grad: np.ndarray
    hessian: np.ndarray
    eps_table: list = field(default_factory=list)

    def value(self, eps, direction=None):
        d = self.a if direction is None else np.asarray(direction, dtype=float)
        return float(eps * d @ self.grad + 0.5 * eps ** 2 * d @ self.hessian @ d)

    def as_dict(self):
        return {
            "a": list(map(float, self.a)),
            "grad": list(map(float, self.grad)),
            "hessian": [list(map(float, r)) for r in self.hessian],
            "eps_table": [list(map(float, r)) for r in self.eps_table],
        }


def expansion(tree, gamma, endowment, claims, a, eps_grid=(0.1, 0.05, 0.025, 0.0125)) -> Expansion:
    """Expansion at zero in direction ``a`` with a table of (eps, exact, approx, error)."""
    B = _claims(tree, claims)
    a = _quantities(a, len(B))
    zero = np.zeros(len(B))
    ex = Expansion(a, price_gradient(tree, gamma, endowment, B, zero),
                   price_hessian(tree, gamma, endowment, B, zero))
    for eps in eps_grid:
        exact = writer_value(tree, gamma, endowment, eps * (a @ B))
        approx = ex.value(eps)
        ex.eps_table.append((eps, exact, approx, exact - approx))
    return ex


def remainder_slope(table) -> float:
    """Least-squares slope of log|error| against log eps."""
    eps = np.array([r[0] for r in table])
    err = np.abs(np.array([r[3] for r in table]))
    return float(np.polyfit(np.log(eps), np.log(np.maximum(err, 1e-300)), 1)[0])


# ---------------------------------------------------------------------------
# two-agent small-trade quantities


def _dual_expectations(tree, agent1, agent2, claim):
    a1, a2 = _agent(agent1), _agent(agent2)
    b = tree.claim(claim)
    q1 = dual_optimizer(tree, a1.gamma, a1.endowment, np.zeros_like(b))
    q2 = dual_optimizer(tree, a2.gamma, a2.endowment, np.zeros_like(b))
    return a1, a2, b, q1, q2


def small_trade_direction(tree, agent1, agent2, claim) -> str:
    """Which small trades in ``claim`` are strictly agreeable.

    'buy-segment': agent 2 buying a small positive amount from agent 1;
    'sell-segment': the reverse; 'none': neither (including replicable claims).
    """
    a1, a2, b, q1, q2 = _dual_expectations(tree, agent1, agent2, claim)
    if is_replicable(tree, b):
        return "none"
    diff = q2.expectation(b) - q1.expectation(b)
    if diff > SEGMENT_TOL:
        return "buy-segment"
    if diff < -SEGMENT_TOL:
        return "sell-segment"
    return "none"


def _width_terms(tree, agent1, agent2, claim):
    a1, a2, b, q1, q2 = _dual_expectations(tree, agent1, agent2, claim)
    lin = q2.expectation(b) - q1.expectation(b)
    curv = (a1.gamma * projected_variance(tree, q1, b).matrix[0, 0]
            + a2.gamma * projected_variance(tree, q2, b).matrix[0, 0])
    return lin, curv


def approx_interval_width(tree, agent1, agent2, claim, alpha) -> float:
    """Second-order approximation of ``nu_b2(alpha B) - nu_w1(alpha B)``."""
    lin, curv = _width_terms(tree, agent1, agent2, claim)
    return float(alpha * lin - 0.5 * alpha ** 2 * curv)


def approx_peq(tree, agent1, agent2, claim) -> float:
    """Quantity maximising the quadratic approximation of the interval width."""
    lin, curv = _width_terms(tree, agent1, agent2, claim)
    if curv <= 1e-12:
        raise DegenerateClaim("claim has no unhedgeable part; the quadratic term vanishes")
    return float(lin / curv)


def exact_interval_width(tree, agent1, agent2, claim, alpha) -> float:
    a1, a2 = _agent(agent1), _agent(agent2)
    b = alpha * tree.claim(claim)
    return (buyer_value(tree, a2.gamma, a2.endowment, b)
            - writer_value(tree, a1.gamma, a1.endowment, b))


__all__ = [
    "Expansion", "approx_interval_width", "approx_peq", "exact_interval_width", "expand_price",
    "expansion", "price_gradient", "price_hessian", "remainder_slope", "small_trade_direction",
]
