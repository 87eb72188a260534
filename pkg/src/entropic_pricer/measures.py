"""Martingale measures on a :class:`MarketTree`.

Conditional probabilities are stored per node (the probability of reaching a
node from its parent), with 1 at the root.  The minimal-entropy measure with
respect to a tilted measure ``P_C`` is read off the backward induction of
:mod:`entropic_pricer.kernels` with terminal log values ``C``.
"""
from __future__ import annotations

import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from . import kernels
from .errors import DimensionMismatch, NoMartingaleMeasure

VERTEX_TOL = 1e-12


class MartingaleMeasure:
    """A probability measure on the tree given by conditional branch probabilities."""

    def __init__(self, tree, cond, log_cond=None):
        cond = np.array(cond, dtype=float)
        if cond.shape != (tree.n_nodes,):
            raise DimensionMismatch(f"expected {tree.n_nodes} conditional probabilities")
        cond[0] = 1.0
        cond.flags.writeable = False
        self.tree = tree
        self.cond = cond
        if log_cond is None:
            with np.errstate(divide="ignore"):
                log_cond = np.log(cond)
        self.log_cond = np.asarray(log_cond, dtype=float)

    @classmethod
    def from_leaf_prob(cls, tree, leaf_prob):
        """Rebuild conditional probabilities from a full-support leaf measure."""
        lp = np.asarray(leaf_prob, dtype=float)
        if lp.shape != (tree.n_leaves,):
            raise DimensionMismatch(f"expected {tree.n_leaves} leaf probabilities")
        node = np.zeros(tree.n_nodes)
        node[tree.first_leaf:] = lp
        for lvl in reversed(tree.levels[1:]):
            np.add.at(node, tree.parent[lvl], node[lvl])
        cond = np.ones(tree.n_nodes)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond[1:] = np.where(node[tree.parent[1:]] > 0,
                                node[1:] / node[tree.parent[1:]], 0.0)
        return cls(tree, cond)

    @property
    def log_leaf_prob(self) -> np.ndarray:
        t = self.tree
        acc = self.log_cond.copy()
        for lvl in t.levels[1:]:
            acc[lvl] += acc[t.parent[lvl]]
        return acc[t.first_leaf:]

    @property
    def leaf_prob(self) -> np.ndarray:
        return np.exp(self.log_leaf_prob)

    def expectation(self, claim):
        return float(self.leaf_prob @ self.tree.claim(claim))

    def node_expectations(self, claim):
        """E^Q[claim | node] at every node."""
        return self.tree.conditional_expectation(self.tree.claim(claim), self.cond)

    def martingale_residual(self):
        """Largest |E^Q[dS | node]| over internal nodes and risky assets."""
        t = self.tree
        drift = np.zeros((t.n_nodes, t.num_assets))
        np.add.at(drift, t.parent[1:], self.cond[1:, None] * t.dS[1:])
        return float(np.abs(drift[:t.n_internal]).max(initial=0.0))

    def __repr__(self):
        return f"MartingaleMeasure(leaves={self.tree.n_leaves})"


@dataclass(frozen=True, eq=False)
class TiltedMeasure:
    """Leaf measure with density proportional to exp(C) against P."""

    leaf_prob: np.ndarray
    log_leaf_prob: np.ndarray


@dataclass(frozen=True, eq=False)
class EntropyReport:
    measure: MartingaleMeasure
    entropy: float
    iterations: int
    grad_norm: float
    log_value: float


# ---------------------------------------------------------------------------
# basic operations


def tilt(tree, c) -> TiltedMeasure:
    c = tree.claim(c)
    logw = c + np.log(tree.leaf_prob)
    logw = logw - logsumexp(logw)
    return TiltedMeasure(np.exp(logw), logw)


def _leaf_array(m):
    if isinstance(m, (MartingaleMeasure, TiltedMeasure)):
        return m.leaf_prob
    return np.asarray(m, dtype=float)


def relative_entropy(q, p) -> float:
    """H(q|p) = sum q log(q/p) with the convention 0 log 0 = 0."""
    qa, pa = _leaf_array(q), _leaf_array(p)
    if qa.shape != pa.shape:
        raise DimensionMismatch(f"measures have shapes {qa.shape} and {pa.shape}")
    if isinstance(q, MartingaleMeasure) and isinstance(p, TiltedMeasure):
        lq = q.log_leaf_prob
        return float(np.sum(np.where(qa > 0, qa * (lq - p.log_leaf_prob), 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.sum(xlogy(qa, qa) - xlogy(qa, pa)))


def verify_martingale(tree, q, tol: float = 1e-10) -> bool:
    cond = q.cond if isinstance(q, MartingaleMeasure) else np.asarray(q, dtype=float)
    if cond.shape != (tree.n_nodes,) or not np.all(np.isfinite(cond)):
        return False
    if np.any(cond[1:] < -tol):
        return False
    sums = np.zeros(tree.n_nodes)
    np.add.at(sums, tree.parent[1:], cond[1:])
    if np.any(np.abs(sums[:tree.n_internal] - 1.0) > max(tol, 1e-12)):
        return False
    drift = np.zeros((tree.n_nodes, tree.num_assets))
    np.add.at(drift, tree.parent[1:], cond[1:, None] * tree.dS[1:])
    return bool(np.all(np.abs(drift[:tree.n_internal]) <= tol))


# ---------------------------------------------------------------------------
# vertex enumeration of the nodewise martingale polytopes


def _pattern_key(dsn):
    scale = np.abs(dsn).max(axis=0)
    scale[scale == 0] = 1.0
    return dsn.shape, np.round(dsn / scale, 12).tobytes()


def node_vertices(dsn: np.ndarray) -> np.ndarray:
    """Vertices of {q >= 0, sum q = 1, sum q dS = 0} as rows of an array."""
    k, d = dsn.shape
    scale = np.abs(dsn).max(axis=0)
    scale[scale == 0] = 1.0
    A = np.vstack([(dsn / scale).T, np.ones(k)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    r = np.linalg.matrix_rank(A, tol=1e-10)
    # keep a maximal set of independent rows, always including the ones row
    rows = [d]
    for i in range(d):
        if np.linalg.matrix_rank(A[rows + [i]], tol=1e-10) > len(rows):
            rows.append(i)
    Ar, br = A[rows], b[rows]
    subsets = np.array(list(itertools.combinations(range(k), r)), dtype=np.intp)
    M = np.transpose(Ar[:, subsets], (1, 0, 2))
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-10
    if not np.any(ok):
        return np.zeros((0, k))
    x = np.linalg.solve(M[ok], np.broadcast_to(br, (int(ok.sum()), r))[..., None])[..., 0]
    verts = np.zeros((len(x), k))
    np.put_along_axis(verts, subsets[ok], x, axis=1)
    good = np.all(verts >= -VERTEX_TOL, axis=1) & (np.abs(verts @ A.T - b).max(axis=1) <= 1e-9)
    verts = np.clip(verts[good], 0.0, None)
    if len(verts) == 0:
        return verts
    verts /= verts.sum(axis=1, keepdims=True)
    _, idx = np.unique(np.round(verts, 10), axis=0, return_index=True)
    return verts[np.sort(idx)]


def polytope_vertices(tree):
    """Per-internal-node vertex arrays, cached on the tree.

    Raises :class:`NoMartingaleMeasure` when some node has no strictly
    positive martingale probability vector.
    """
    cached = tree._cache.get("vertices")
    if cached is not None:
        return cached
    by_pattern = {}
    out = []
    for i in range(tree.n_internal):
        ch = tree.children(i)
        dsn = tree.dS[ch.start:ch.stop]
        key = _pattern_key(dsn)
        verts = by_pattern.get(key)
        if verts is None:
            verts = node_vertices(dsn)
            by_pattern[key] = verts
        if len(verts) == 0:
            raise NoMartingaleMeasure(f"node {tree.ids[i]!r}: no martingale probabilities exist")
        if verts.mean(axis=0).min() <= VERTEX_TOL:
            raise NoMartingaleMeasure(
                f"node {tree.ids[i]!r}: every martingale probability vector has a zero entry")
        out.append(verts)
    out = tuple(out)
    tree._cache["vertices"] = out
    return out


def check_no_arbitrage(tree) -> None:
    polytope_vertices(tree)


def price_bounds(tree, claim):
    """(inf, sup) of E^Q[claim] over all martingale measures (closed polytope)."""
    verts = polytope_vertices(tree)
    b = tree.claim(claim)
    lo = np.zeros(tree.n_nodes)
    hi = np.zeros(tree.n_nodes)
    lo[tree.first_leaf:] = b
    hi[tree.first_leaf:] = b
    for i in range(tree.n_internal - 1, -1, -1):
        ch = tree.children(i)
        V = verts[i]
        lo[i] = (V @ lo[ch.start:ch.stop]).min()
        hi[i] = (V @ hi[ch.start:ch.stop]).max()
    return float(lo[0]), float(hi[0])


def random_martingale_measure(tree, rng, min_interior: float = 0.05) -> MartingaleMeasure:
    """Random strictly positive martingale measure.

    At each node a Dirichlet mixture of the polytope vertices is blended with
    the vertex barycentre (weight at least ``min_interior``).
    """
    verts = polytope_vertices(tree)
    cond = np.ones(tree.n_nodes)
    for i in range(tree.n_internal):
        V = verts[i]
        w = rng.dirichlet(np.ones(len(V)))
        eta = rng.uniform(min_interior, 1.0)
        ch = tree.children(i)
        cond[ch.start:ch.stop] = (1 - eta) * (w @ V) + eta * V.mean(axis=0)
    return MartingaleMeasure(tree, cond)


# ---------------------------------------------------------------------------
# entropic backward induction with a small per-tree cache

_CACHE_SIZE = 256
_lock = threading.Lock()


def induce(tree, terminal, tol=None, max_iter=None):
    """Cached :func:`kernels.backward_induction` after an arbitrage check."""
    check_no_arbitrage(tree)
    terminal = np.ascontiguousarray(terminal, dtype=float)
    key = (terminal.tobytes(), tol, max_iter, kernels.BACKEND, kernels.DEFAULT_TOL,
           kernels.DEFAULT_MAX_ITER)
    with _lock:
        cache = tree._cache.setdefault("induction", OrderedDict())
        hit = cache.get(key)
        if hit is not None:
            cache.move_to_end(key)
            return hit
    res = kernels.backward_induction(tree, terminal, tol=tol, max_iter=max_iter)
    with _lock:
        cache[key] = res
        while len(cache) > _CACHE_SIZE:
            cache.popitem(last=False)
    return res


def measure_from_induction(tree, res) -> MartingaleMeasure:
    return MartingaleMeasure(tree, np.exp(res.logq), log_cond=res.logq)


def tilted_measure(tree, c, tol=None) -> MartingaleMeasure:
    """Q^(C): the martingale measure of minimal entropy relative to P_C."""
    c = tree.claim(c)
    return measure_from_induction(tree, induce(tree, c, tol=tol))


def minimal_entropy_measure(tree, c=None, tol: float | None = None) -> EntropyReport:
    """Minimal-entropy martingale measure relative to P_C (``c`` defaults to 0)."""
    c = np.zeros(tree.n_leaves) if c is None else tree.claim(c)
    res = induce(tree, c, tol=tol)
    q = measure_from_induction(tree, res)
    entropy = max(0.0, relative_entropy(q, tilt(tree, c)))
    return EntropyReport(
        measure=q,
        entropy=float(entropy),
        iterations=int(res.iters.max(initial=0)),
        grad_norm=q.martingale_residual(),
        log_value=res.log_root,
    )


def penalty(tree, q, c=None) -> float:
    """h_C(q) = H(q|P_C) - H(Q^(C)|P_C)."""
    c = np.zeros(tree.n_leaves) if c is None else tree.claim(c)
    if not isinstance(q, MartingaleMeasure):
        q = MartingaleMeasure(tree, q)
    rep = minimal_entropy_measure(tree, c)
    return relative_entropy(q, tilt(tree, c)) - rep.entropy
