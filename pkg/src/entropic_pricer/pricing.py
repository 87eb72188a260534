"""Indirect utilities and exponential indifference prices.

Everything is expressed through the root log value

    L(C) = log min_theta E^P[exp(C + theta . G_T)],

computed by backward induction.  With ``C = -gamma * X`` this is the log of
the minimal expected disutility of terminal wealth ``X``; the writer price of
``B`` given endowment ``E`` is ``(L(gamma B - gamma E) - L(-gamma E)) / gamma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GammaOutOfRange
from .market import TradingStrategy
from .measures import MartingaleMeasure, induce, measure_from_induction, price_bounds

GAMMA_MIN = 1e-6
GAMMA_MAX = 1e6


def check_gamma(gamma) -> float:
    g = float(gamma)
    if not (GAMMA_MIN <= g <= GAMMA_MAX):
        raise GammaOutOfRange(f"risk aversion {gamma!r} outside [{GAMMA_MIN:g}, {GAMMA_MAX:g}]")
    return g


def _zeros_if_none(tree, e):
    return np.zeros(tree.n_leaves) if e is None else tree.claim(e)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Value function of the exponential-utility problem for terminal wealth X.

    ``log_value[n]`` is log V_n with V_n = min E[exp(-gamma (X + gains)) | n];
    ``strategy`` holds the optimal risky positions.
    """

    gamma: float
    log_value: np.ndarray
    strategy: TradingStrategy
    iterations: int

    @property
    def value(self):
        return np.exp(self.log_value)


def value_function(tree, gamma, wealth) -> ValueFunction:
    gamma = check_gamma(gamma)
    res = induce(tree, -gamma * tree.claim(wealth))
    return ValueFunction(gamma, res.logv, TradingStrategy(-res.theta / gamma),
                         int(res.iters.max(initial=0)))


def log_value(tree, terminal) -> float:
    """L(C) at the root for terminal log values ``C``."""
    return induce(tree, tree.claim(terminal)).log_root


def indirect_utility(tree, gamma, endowment=None, claim=None) -> float:
    """u(B|E) = sup over strategies of E[-exp(-gamma (E + B + gains))]."""
    gamma = check_gamma(gamma)
    x = _zeros_if_none(tree, endowment) + _zeros_if_none(tree, claim)
    return -math.exp(log_value(tree, -gamma * x))


# ---------------------------------------------------------------------------
# prices as floats


def writer_value(tree, gamma, endowment, claim) -> float:
    """Writer indifference price of ``claim`` for an agent holding ``endowment``."""
    gamma = check_gamma(gamma)
    e = _zeros_if_none(tree, endowment)
    b = tree.claim(claim)
    return (log_value(tree, gamma * (b - e)) - log_value(tree, -gamma * e)) / gamma


def buyer_value(tree, gamma, endowment, claim) -> float:
    return -writer_value(tree, gamma, endowment, -tree.claim(claim))


def unconditional_writer(tree, gamma, claim) -> float:
    return writer_value(tree, gamma, None, claim)


def unconditional_buyer(tree, gamma, claim) -> float:
    return buyer_value(tree, gamma, None, claim)


# ---------------------------------------------------------------------------
# quotes


@dataclass(frozen=True, eq=False)
class PriceQuote:
    writer: float
    buyer: float
    gamma: float
    claim: str = ""
    endowment: str = ""
    dual_measure: MartingaleMeasure | None = None
    bounds: tuple | None = None

    def as_dict(self):
        return {
            "gamma": self.gamma,
            "claim": self.claim,
            "endowment": self.endowment,
            "writer": self.writer,
            "buyer": self.buyer,
            "dual_measure_id": f"Q^(gamma*{self.claim or 'B'}-gamma*{self.endowment or 'E'})",
            "bounds": list(self.bounds) if self.bounds is not None else None,
        }


def writer_price(tree, gamma, endowment, claim, *, claim_name="", endowment_name="",
                 with_bounds=False) -> PriceQuote:
    gamma = check_gamma(gamma)
    b = tree.claim(claim)
    return PriceQuote(
        writer=writer_value(tree, gamma, endowment, b),
        buyer=buyer_value(tree, gamma, endowment, b),
        gamma=gamma,
        claim=claim_name,
        endowment=endowment_name,
        dual_measure=dual_optimizer(tree, gamma, endowment, b),
        bounds=price_bounds(tree, b) if with_bounds else None,
    )


def buyer_price(tree, gamma, endowment, claim, **kw) -> PriceQuote:
    """Same quote as :func:`writer_price`; provided for symmetry of the API."""
    return writer_price(tree, gamma, endowment, claim, **kw)


def price_process(tree, gamma, endowment, claim) -> np.ndarray:
    """Writer indifference price at every node of the tree (equals B at the leaves)."""
    gamma = check_gamma(gamma)
    e = _zeros_if_none(tree, endowment)
    b = tree.claim(claim)
    num = induce(tree, gamma * (b - e)).logv
    den = induce(tree, -gamma * e).logv
    return (num - den) / gamma


def dual_optimizer(tree, gamma, endowment, claim) -> MartingaleMeasure:
    """The measure Q^(gamma B - gamma E) attaining the dual writer-price supremum."""
    gamma = check_gamma(gamma)
    c = gamma * (tree.claim(claim) - _zeros_if_none(tree, endowment))
    return measure_from_induction(tree, induce(tree, c))
