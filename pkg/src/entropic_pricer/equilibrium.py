"""Demand and the partial-equilibrium price-quantity of two agents.

Quantities ``a`` are amounts of the claim vector ``B`` that agent 1 sells to
agent 2.  The equilibrium minimises the strictly convex function

    f(a) = nu_w(a.B; g1 | E1) - nu_b(a.B; g2 | E2),

whose gradient is the difference of the two agents' marginal prices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .agreement import _agent
from .errors import NewtonDivergence, ReplicableCombination
from .hedging import projected_variance
from .market import REPLICATION_TOL
from .measures import price_bounds
from .pricing import buyer_value, dual_optimizer, writer_value

log = logging.getLogger(__name__)

MAX_QUANTITY = 1e6
MAX_ITER = 500


def _claims(tree, claims):
    B = np.atleast_2d(np.asarray(claims, dtype=float))
    for row in B:
        tree.claim(row)
    if len(B) > 4:
        raise ValueError("at most four claims can be traded jointly")
    return B


def check_non_replicable(tree, claims, tol=REPLICATION_TOL):
    """Raise :class:`ReplicableCombination` if some nonzero a.B is replicable."""
    B = _claims(tree, claims)
    key = ("nonrep", B.tobytes(), tol)
    if tree._cache.get(key):
        return
    phi = tree.replication_basis()
    coef, *_ = np.linalg.lstsq(phi, B.T, rcond=None)
    R = B - (phi @ coef).T
    _, s, vt = np.linalg.svd(R, full_matrices=False)
    thresh = tol * (1.0 + np.abs(B).max()) * np.sqrt(tree.n_leaves)
    if len(s) < len(B) or s[-1] <= thresh:
        direction = vt[-1] if len(s) == len(B) else np.eye(len(B))[-1]
        direction = direction / np.abs(direction).max()
        raise ReplicableCombination(
            f"the combination {np.round(direction, 6).tolist()} of the claims is replicable",
            direction=direction)
    tree._cache[key] = True


def excess_objective(tree, agent1, agent2, claims, a):
    """(f(a), grad f(a), Hessian f(a))."""
    a1, a2 = _agent(agent1), _agent(agent2)
    B = _claims(tree, claims)
    check_non_replicable(tree, B)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    x = a @ B
    value = writer_value(tree, a1.gamma, a1.endowment, x) - buyer_value(tree, a2.gamma, a2.endowment, x)
    q1 = dual_optimizer(tree, a1.gamma, a1.endowment, x)
    q2 = dual_optimizer(tree, a2.gamma, a2.endowment, -x)
    grad = B @ q1.leaf_prob - B @ q2.leaf_prob
    hess = (a1.gamma * projected_variance(tree, q1, B).matrix
            + a2.gamma * projected_variance(tree, q2, B).matrix)
    return float(value), grad, hess


def _newton(fun, x0, tol, max_iter, bound=np.inf):
    """Damped Newton for a smooth convex function with a growing trust radius.

    ``fun(x)`` returns (value, gradient, Hessian).  Returns
    ``(x, grad, iters, status)`` with status 'ok', 'unbounded' or 'failed'.
    """
    x = np.array(x0, dtype=float)
    f, g, H = fun(x)
    radius = 10.0
    for it in range(max_iter + 1):
        gnorm = np.abs(g).max()
        if gnorm <= tol:
            return x, g, it, "ok"
        if np.abs(x).max() > bound:
            return x, g, it, "unbounded"
        if it == max_iter:
            break
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        slope = g @ step
        if not (-np.inf < slope < 0):
            step, slope = -g, -(g @ g)
        capped = np.abs(step).max() > radius
        if capped:
            shrink = radius / np.abs(step).max()
            step, slope = step * shrink, slope * shrink
        t = 1.0
        for _ in range(60):
            xn = x + t * step
            fn, gn, Hn = fun(xn)
            if fn <= f + 1e-4 * t * slope or (
                    fn <= f + 1e-13 * (1 + abs(f)) and np.abs(gn).max() < gnorm):
                break
            t *= 0.5
        else:
            return x, g, it, "failed"
        if capped and t == 1.0:
            radius *= 4.0
        x, f, g, H = xn, fn, gn, Hn
    return x, g, max_iter, "failed"


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    a_hat: np.ndarray
    p_hat: np.ndarray
    grad_norm: float
    iters: int
    clearing_residual: float
    clearing_ok: bool = True

    def as_dict(self):
        return {
            "a_hat": list(map(float, self.a_hat)),
            "p_hat": list(map(float, self.p_hat)),
            "grad_norm": self.grad_norm,
            "iters": self.iters,
            "clearing_ok": self.clearing_ok,
        }


def solve_pepq(tree, agent1, agent2, claims, tol: float = 1e-10, start=None,
               max_iter: int = MAX_ITER) -> EquilibriumResult:
    """Unique partial-equilibrium quantity and price by Newton on the excess objective."""
    B = _claims(tree, claims)
    check_non_replicable(tree, B)
    a1, a2 = _agent(agent1), _agent(agent2)
    x0 = np.zeros(len(B)) if start is None else np.atleast_1d(np.asarray(start, dtype=float))
    a, g, iters, status = _newton(lambda x: excess_objective(tree, a1, a2, B, x), x0, tol, max_iter)
    if status != "ok":
        raise NewtonDivergence(f"equilibrium Newton {status} after {iters} iterations at a={a}")
    p = B @ dual_optimizer(tree, a1.gamma, a1.endowment, a @ B).leaf_prob
    res = float(np.abs(g).max())
    return EquilibriumResult(a, p, res, iters, res, res <= 10 * tol)


def verify_clearing(result, tree, agents, claims, tol: float = 1e-10) -> bool:
    """Both agents' marginal prices at +/- a_hat equal p_hat within 10 tol."""
    a1, a2 = (_agent(x) for x in agents)
    B = _claims(tree, claims)
    x = np.asarray(result.a_hat) @ B
    p1 = B @ dual_optimizer(tree, a1.gamma, a1.endowment, x).leaf_prob
    p2 = B @ dual_optimizer(tree, a2.gamma, a2.endowment, -x).leaf_prob
    p = np.asarray(result.p_hat)
    return bool(np.abs(p1 - p).max() <= 10 * tol and np.abs(p2 - p).max() <= 10 * tol)


def demand(tree, agent, claims, p, tol: float = 1e-10):
    """Quantity of ``claims`` the agent is willing to write at unit prices ``p``.

    Maximises ``a.p - nu_w(a.B; gamma | E)``; the optimum satisfies
    ``E^{Q^(gamma a.B - gamma E)}[B] = p``.  Returns ``None`` when the supremum
    is not attained (the prices are not strictly arbitrage-free for the
    agent, detected as |a| exceeding 1e6).
    """
    ag = _agent(agent)
    B = _claims(tree, claims)
    check_non_replicable(tree, B)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    for k, row in enumerate(B):
        lo, hi = price_bounds(tree, row)
        if not (lo < p[k] < hi):
            return None

    def fun(a):
        x = a @ B
        q = dual_optimizer(tree, ag.gamma, ag.endowment, x)
        val = writer_value(tree, ag.gamma, ag.endowment, x) - a @ p
        return val, B @ q.leaf_prob - p, ag.gamma * projected_variance(tree, q, B).matrix

    a, g, iters, status = _newton(fun, np.zeros(len(B)), tol, MAX_ITER, bound=MAX_QUANTITY)
    if status == "ok":
        return a
    if status == "unbounded" or np.abs(a).max() > 1e3:
        log.debug("demand unbounded after %d iterations (|a|=%g)", iters, np.abs(a).max())
        return None
    raise NewtonDivergence(f"demand Newton failed after {iters} iterations at a={a}")
