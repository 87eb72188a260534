"""Optimal hedges, residual risk, Kunita-Watanabe decompositions and projected variances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import SingularGram
from .market import TradingStrategy, gains_process, terminal_gains
from .measures import MartingaleMeasure, induce
from .pricing import _zeros_if_none, check_gamma, price_process

PIVOT_TOL = 1e-12


def optimal_strategy(tree, gamma, endowment, claim) -> TradingStrategy:
    """Writer's hedge of ``claim``: optimal positions holding E - B minus those holding E."""
    gamma = check_gamma(gamma)
    e = _zeros_if_none(tree, endowment)
    b = tree.claim(claim)
    with_claim = induce(tree, gamma * (b - e)).theta
    without = induce(tree, -gamma * e).theta
    return TradingStrategy((without - with_claim) / gamma)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``claim = price + gains(strategy) + residual`` leafwise.

    For the buyer side ``claim`` is the negated traded claim, so ``price`` is
    minus the buyer price.
    """

    side: str
    claim: np.ndarray
    price: float
    strategy: TradingStrategy
    residual: np.ndarray
    process: np.ndarray

    def as_dict(self, tree):
        return {
            "side": self.side,
            "price": self.price,
            "strategy": self.strategy.as_dict(tree),
            "residual": list(map(float, self.residual)),
            "residual_process": list(map(float, self.process)),
        }


def residual_risk(tree, gamma, endowment, claim, side: str = "writer") -> Decomposition:
    """Residual risk of the writer (or buyer) of ``claim`` after optimal hedging.

    The residual process at node n is nu_n - nu_0 - G_n, where nu is the
    dynamic writer price; at the leaves it equals the residual claim.
    """
    if side not in ("writer", "buyer"):
        raise ValueError(f"side must be 'writer' or 'buyer', got {side!r}")
    b = tree.claim(claim)
    if side == "buyer":
        b = -b
    nu = price_process(tree, gamma, endowment, b)
    theta = optimal_strategy(tree, gamma, endowment, b)
    g = gains_process(tree, theta)
    process = nu - nu[0] - g
    residual = b - nu[0] - g[tree.first_leaf:]
    return Decomposition(side, b, float(nu[0]), theta, residual, process)


# ---------------------------------------------------------------------------
# quadratic projections


def _check_positive(tree, q):
    if not isinstance(q, MartingaleMeasure):
        q = MartingaleMeasure(tree, q)
    if np.any(q.cond[1:] <= 0):
        raise ValueError("the measure must give every node positive probability")
    return q


def kw_decompose(tree, q, claim):
    """Kunita-Watanabe decomposition of ``claim`` under the martingale measure ``q``.

    Returns ``(mean, strategy, orthogonal)`` where ``mean = E^q[claim]``,
    ``strategy`` is obtained node by node from the conditional regression of
    the value increments on the price increments, and ``orthogonal`` is the
    remainder.
    """
    q = _check_positive(tree, q)
    b = tree.claim(claim)
    v = tree.conditional_expectation(b, q.cond)
    d = tree.num_assets
    theta = np.zeros((tree.n_internal, d))
    for i in range(tree.n_internal):
        ch = tree.children(i)
        w = q.cond[ch.start:ch.stop]
        dS = tree.dS[ch.start:ch.stop]
        dS = dS - w @ dS
        dv = v[ch.start:ch.stop] - v[i]
        gram = (dS * w[:, None]).T @ dS
        diag = np.sqrt(np.diag(gram))
        if np.any(diag <= 0):
            raise SingularGram(f"node {tree.ids[i]!r}: an asset does not move")
        scaled = gram / np.outer(diag, diag)
        try:
            L = np.linalg.cholesky(scaled)
        except np.linalg.LinAlgError:
            raise SingularGram(f"node {tree.ids[i]!r}: price increments are linearly dependent")
        if np.diag(L).min() ** 2 < PIVOT_TOL:
            raise SingularGram(f"node {tree.ids[i]!r}: price increments are nearly dependent")
        rhs = (dS * w[:, None]).T @ dv / diag
        theta[i] = np.linalg.solve(L.T, np.linalg.solve(L, rhs)) / diag
    strategy = TradingStrategy(theta)
    orthogonal = b - v[0] - terminal_gains(tree, strategy)
    return float(v[0]), strategy, orthogonal


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """Projected variance-covariance matrix and the projection residuals (one row per claim)."""

    matrix: np.ndarray
    residuals: np.ndarray


def projected_variance(tree, q, claims) -> ProjectionResult:
    """Delta^q of a vector of claims.

    Each claim is projected in L2(q) onto constants plus terminal gains by
    solving the global normal equations with a pivoted Cholesky factorisation;
    the matrix entries are q-inner products of the residuals.
    """
    q = _check_positive(tree, q)
    B = np.atleast_2d(np.asarray(claims, dtype=float))
    for row in B:
        tree.claim(row)
    w = q.leaf_prob
    phi = tree.replication_basis()
    gram = (phi * w[:, None]).T @ phi
    rhs = (phi * w[:, None]).T @ B.T
    diag = np.sqrt(np.diag(gram))
    if np.any(diag <= 0):
        raise SingularGram("a one-period gain vanishes identically")
    scaled = gram / np.outer(diag, diag)
    c, piv, rank, info = lapack.dpstrf(scaled, lower=1, tol=PIVOT_TOL)
    if info < 0:  # pragma: no cover - argument error
        raise SingularGram(f"pivoted Cholesky failed (info={info})")
    if rank < len(scaled):
        raise SingularGram(
            f"normal equations are rank deficient ({rank} of {len(scaled)})")
    L = np.tril(c)
    p = piv - 1
    y = np.linalg.solve(L, (rhs / diag[:, None])[p])
    z = np.empty_like(y)
    z[p] = np.linalg.solve(L.T, y)
    coef = z / diag[:, None]
    resid = B - (phi @ coef).T
    mat = (resid * w) @ resid.T
    mat = 0.5 * (mat + mat.T)
    return ProjectionResult(mat, resid)
