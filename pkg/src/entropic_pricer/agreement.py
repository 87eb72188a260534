"""Mutual agreement between two exponential-utility agents.

Agent 1 is the potential seller (writer) and agent 2 the potential buyer of
a claim ``B``.  A price is mutually agreeable iff it lies in
``[nu_w(B; g1 | E1), nu_b(B; g2 | E2)]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import AgentProfile, is_replicable
from .pricing import buyer_value, unconditional_buyer, writer_value

STRICT_TOL = 1e-10


def _agent(a) -> AgentProfile:
    if isinstance(a, AgentProfile):
        return a
    gamma, endowment = a
    return AgentProfile(gamma, endowment)


@dataclass(frozen=True, eq=False)
class AgreementReport:
    writer: float
    buyer: float
    interval: tuple | None
    strict: bool
    sigma: float | None = None
    bstar: np.ndarray | None = None
    bstar_replicable: bool | None = None

    @property
    def classification(self) -> str:
        return classify(self.writer, self.buyer)

    def as_dict(self):
        return {
            "writer": self.writer,
            "buyer": self.buyer,
            "interval": list(self.interval) if self.interval is not None else None,
            "strict": self.strict,
            "sigma": self.sigma,
            "bstar_replicable": self.bstar_replicable,
        }


def classify(writer: float, buyer: float, tol: float = STRICT_TOL) -> str:
    width = buyer - writer
    if width > tol:
        return "strict"
    if width >= -tol:
        return "weak"
    return "none"


def agreement_interval(tree, agent1, agent2, claim) -> AgreementReport:
    a1, a2 = _agent(agent1), _agent(agent2)
    b = tree.claim(claim)
    w = writer_value(tree, a1.gamma, a1.endowment, b)
    v = buyer_value(tree, a2.gamma, a2.endowment, b)
    kind = classify(w, v)
    interval = None if kind == "none" else (w, max(w, v))
    return AgreementReport(writer=w, buyer=v, interval=interval, strict=kind == "strict")


def is_agreeable(tree, agent1, agent2, claim) -> str:
    """'strict', 'weak' or 'none'."""
    rep = agreement_interval(tree, agent1, agent2, claim)
    return classify(rep.writer, rep.buyer)


def optimal_claim(agent1, agent2) -> np.ndarray:
    """The score-maximising transfer B* = (g1 E1 - g2 E2) / (g1 + g2)."""
    a1, a2 = _agent(agent1), _agent(agent2)
    if a1.endowment.shape != a2.endowment.shape:
        from .errors import TreeMismatch

        raise TreeMismatch("endowments live on different trees")
    return (a1.gamma * a1.endowment - a2.gamma * a2.endowment) / (a1.gamma + a2.gamma)


def excess(tree, agent1, agent2, claim) -> float:
    """nu_b(B; g2|E2) - nu_w(B; g1|E1): the gain in total score from transferring B."""
    a1, a2 = _agent(agent1), _agent(agent2)
    b = tree.claim(claim)
    return buyer_value(tree, a2.gamma, a2.endowment, b) - writer_value(tree, a1.gamma, a1.endowment, b)


def max_excess_score(tree, agent1, agent2):
    """(Sigma, B*): the largest achievable excess score and the claim attaining it."""
    bstar = optimal_claim(agent1, agent2)
    return max(0.0, excess(tree, agent1, agent2, bstar)), bstar


def score(tree, agent1, agent2, allocation) -> float:
    """sigma(B1, B2) = unconditional buyer price of B1 for agent 1 plus that of B2 for agent 2."""
    a1, a2 = _agent(agent1), _agent(agent2)
    b1, b2 = allocation
    return unconditional_buyer(tree, a1.gamma, b1) + unconditional_buyer(tree, a2.gamma, b2)


def agreement_report(tree, agent1, agent2, claim) -> AgreementReport:
    """Interval for ``claim`` together with Sigma and B* for the agent pair."""
    rep = agreement_interval(tree, agent1, agent2, claim)
    sigma, bstar = max_excess_score(tree, agent1, agent2)
    return AgreementReport(
        writer=rep.writer, buyer=rep.buyer, interval=rep.interval, strict=rep.strict,
        sigma=sigma, bstar=bstar, bstar_replicable=is_replicable(tree, bstar),
    )
