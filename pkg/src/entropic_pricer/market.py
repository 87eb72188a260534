"""Finite event-tree markets.

A :class:`MarketTree` is stored in breadth-first order with the children of
every node sorted by id and stored contiguously.  All leaves sit at the final
date, so they form the trailing block of nodes, and their order coincides with
the depth-first (left-to-right) leaf order used by scenario files.

Claims are plain float arrays with one entry per leaf in that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    ClaimTreeMismatch,
    DanglingNode,
    InvalidTree,
    NonPositiveProbability,
    NumeraireNotOne,
    ParseError,
    ProbabilitySumMismatch,
    SchemaViolation,
    StrategyTreeMismatch,
    ValidationError,
)

MAX_BRANCHING = 16
MAX_ASSETS = 4
PROB_SUM_TOL = 1e-12
REPLICATION_TOL = 1e-9

Claim = np.ndarray


@dataclass(frozen=True)
class TreeNode:
    id: Any
    time: int
    parent: Any
    children: tuple
    prob: float
    prices: tuple


@dataclass(frozen=True, eq=False)
class TradingStrategy:
    """Risky-asset positions held over each period, one row per internal node."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or not np.all(np.isfinite(pos)):
            raise StrategyTreeMismatch("positions must be a finite 2-d array")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    def __add__(self, other):
        return TradingStrategy(self.positions + _positions(other))

    def __sub__(self, other):
        return TradingStrategy(self.positions - _positions(other))

    def __neg__(self):
        return TradingStrategy(-self.positions)

    def __mul__(self, k):
        return TradingStrategy(self.positions * float(k))

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, tree):
        return cls(np.zeros((tree.n_internal, tree.num_assets)))

    def as_dict(self, tree):
        return {str(tree.ids[i]): list(map(float, row)) for i, row in enumerate(self.positions)}


def _positions(strategy):
    if isinstance(strategy, TradingStrategy):
        return strategy.positions
    return np.asarray(strategy, dtype=float)


class MarketTree:
    """Immutable finite event tree carrying asset prices and branch probabilities.

    Use :func:`build_tree` to construct one.  Arrays are indexed by the
    internal breadth-first node index; ``ids`` maps back to user ids.
    """

    def __init__(self, ids, parent, prob, prices):
        self.ids = tuple(ids)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        n = len(self.ids)
        self.parent = _frozen(np.asarray(parent, dtype=np.int64))
        self.prob = _frozen(np.asarray(prob, dtype=float))
        self.prices = _frozen(np.asarray(prices, dtype=float))
        self.num_assets = self.prices.shape[1] - 1

        time = np.zeros(n, dtype=np.int64)
        for i in range(1, n):
            time[i] = time[self.parent[i]] + 1
        self.time = _frozen(time)
        self.horizon = int(time[-1])

        counts = np.bincount(self.parent[1:], minlength=n)
        start = np.ones(n, dtype=np.int64)
        start[1:] += np.cumsum(counts)[:-1]
        start[counts == 0] = 0
        self.child_count = _frozen(counts.astype(np.int64))
        self.child_start = _frozen(start)
        self.first_leaf = int(np.argmax(counts == 0))

        dS = np.zeros((n, self.num_assets))
        dS[1:] = self.prices[1:, 1:] - self.prices[self.parent[1:], 1:]
        self.dS = _frozen(dS)
        self.log_prob = _frozen(np.log(self.prob))

        self.levels = tuple(np.flatnonzero(time == t) for t in range(self.horizon + 1))
        node_prob = self.prob.copy()
        for lvl in self.levels[1:]:
            node_prob[lvl] *= node_prob[self.parent[lvl]]
        self.node_prob = _frozen(node_prob)

        lo = np.zeros(n, dtype=np.int64)
        hi = np.zeros(n, dtype=np.int64)
        lo[self.first_leaf:] = np.arange(n - self.first_leaf)
        hi[self.first_leaf:] = lo[self.first_leaf:] + 1
        for i in range(self.first_leaf - 1, -1, -1):
            s, k = start[i], counts[i]
            lo[i] = lo[s]
            hi[i] = hi[s + k - 1]
        self.leaf_lo = _frozen(lo)
        self.leaf_hi = _frozen(hi)
        self._cache = {}

    # -- sizes ----------------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.ids)

    @property
    def n_leaves(self):
        return self.n_nodes - self.first_leaf

    @property
    def n_internal(self):
        return self.first_leaf

    @property
    def leaf_prob(self):
        return self.node_prob[self.first_leaf:]

    @property
    def leaf_ids(self):
        return self.ids[self.first_leaf:]

    def children(self, i):
        s = self.child_start[i]
        return range(s, s + self.child_count[i])

    @property
    def nodes(self):
        if "nodes" not in self._cache:
            out = []
            for i, nid in enumerate(self.ids):
                p = self.parent[i]
                out.append(TreeNode(
                    id=nid,
                    time=int(self.time[i]),
                    parent=None if p < 0 else self.ids[p],
                    children=tuple(self.ids[c] for c in self.children(i)),
                    prob=float(self.prob[i]),
                    prices=tuple(map(float, self.prices[i])),
                ))
            self._cache["nodes"] = tuple(out)
        return self._cache["nodes"]

    # -- helpers --------------------------------------------------------

    def claim(self, values) -> Claim:
        """Validate ``values`` as a leaf-indexed claim and return a float array."""
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full(self.n_leaves, float(arr))
        if arr.shape != (self.n_leaves,):
            raise ClaimTreeMismatch(
                f"claim has shape {arr.shape}, tree has {self.n_leaves} leaves")
        if not np.all(np.isfinite(arr)):
            raise ClaimTreeMismatch("claim values must be finite")
        return arr

    def strategy(self, strategy) -> np.ndarray:
        pos = _positions(strategy)
        if pos.shape != (self.n_internal, self.num_assets):
            raise StrategyTreeMismatch(
                f"strategy has shape {pos.shape}, expected {(self.n_internal, self.num_assets)}")
        return pos

    def conditional_expectation(self, claim, cond=None):
        """Backward conditional expectations of a claim at every node.

        ``cond`` gives conditional branch probabilities (defaults to P).
        """
        cond = self.prob if cond is None else cond
        vals = np.zeros(self.n_nodes)
        vals[self.first_leaf:] = claim
        for lvl in reversed(self.levels[1:]):
            np.add.at(vals, self.parent[lvl], cond[lvl] * vals[lvl])
        return vals

    def replication_basis(self):
        """Leaf matrix of the constant claim and all one-period single-asset gains.

        Column 0 is the constant 1; column ``1 + i*d + k`` is the gain of holding one
        unit of asset ``k`` at internal node ``i`` for a single period.
        """
        if "basis" not in self._cache:
            d = self.num_assets
            phi = np.zeros((self.n_leaves, 1 + self.n_internal * d))
            phi[:, 0] = 1.0
            for c in range(1, self.n_nodes):
                p = self.parent[c]
                phi[self.leaf_lo[c]:self.leaf_hi[c], 1 + p * d: 1 + (p + 1) * d] = self.dS[c]
            phi.flags.writeable = False
            self._cache["basis"] = phi
        return self._cache["basis"]

    def __repr__(self):
        return (f"MarketTree(nodes={self.n_nodes}, leaves={self.n_leaves}, "
                f"horizon={self.horizon}, assets={self.num_assets})")


def _frozen(a):
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# construction


def _parse_prob(value, nid):
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise NonPositiveProbability(f"node {nid!r}: unreadable probability {value!r}") from exc
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise NonPositiveProbability(f"node {nid!r}: unreadable probability {value!r}") from exc


def build_tree(spec: Sequence[Mapping[str, Any]]) -> MarketTree:
    """Build and validate a tree from a list of node records.

    Each record has ``id``, ``parent`` (``None`` for the root), ``prob`` (the
    conditional probability given the parent; ignored for the root) and
    ``prices`` (length ``d + 1``, with the numeraire entry first and equal to 1).
    Probabilities may be given as fraction strings such as ``"1/3"``.
    """
    if not spec:
        raise InvalidTree("tree has no nodes")
    records = {}
    for rec in spec:
        try:
            nid = rec["id"]
        except (KeyError, TypeError) as exc:
            raise InvalidTree(f"node record without id: {rec!r}") from exc
        if nid in records:
            raise InvalidTree(f"duplicate node id {nid!r}")
        records[nid] = rec

    roots = [nid for nid, rec in records.items() if rec.get("parent") is None]
    if len(roots) != 1:
        raise InvalidTree(f"expected exactly one root, found {len(roots)}")
    kids = {nid: [] for nid in records}
    for nid, rec in records.items():
        par = rec.get("parent")
        if par is None:
            continue
        if par not in records:
            raise DanglingNode(f"node {nid!r} references unknown parent {par!r}")
        kids[par].append(nid)
    for lst in kids.values():
        try:
            lst.sort()
        except TypeError as exc:
            raise InvalidTree("node ids must be mutually comparable") from exc

    order = [roots[0]]
    pos = 0
    while pos < len(order):
        order.extend(kids[order[pos]])
        pos += 1
    if len(order) != len(records):
        missing = sorted(map(str, set(records) - set(order)))
        raise DanglingNode(f"nodes unreachable from the root: {missing[:5]}")

    index = {nid: i for i, nid in enumerate(order)}
    n = len(order)
    parent = np.full(n, -1, dtype=np.int64)
    prob = np.ones(n)
    widths = set()
    price_rows = []
    for i, nid in enumerate(order):
        rec = records[nid]
        if i > 0:
            parent[i] = index[rec["parent"]]
            p = _parse_prob(rec.get("prob"), nid)
            if not (p > 0.0) or p > 1.0 or not math.isfinite(p):
                raise NonPositiveProbability(f"node {nid!r}: probability {p} not in (0, 1]")
            prob[i] = p
        try:
            row = [float(v) for v in rec["prices"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidTree(f"node {nid!r}: missing or malformed prices") from exc
        if not all(math.isfinite(v) for v in row):
            raise InvalidTree(f"node {nid!r}: prices must be finite")
        widths.add(len(row))
        price_rows.append(row)
    if len(widths) != 1:
        raise InvalidTree("all price vectors must have the same length")
    width = widths.pop()
    if width < 2 or width - 1 > MAX_ASSETS:
        raise InvalidTree(f"need between 1 and {MAX_ASSETS} risky assets, got {width - 1}")
    prices = np.array(price_rows)
    if np.any(np.abs(prices[:, 0] - 1.0) > 1e-15):
        bad = order[int(np.argmax(np.abs(prices[:, 0] - 1.0) > 1e-15))]
        raise NumeraireNotOne(f"node {bad!r}: numeraire price must be 1")

    depth = {order[0]: 0}
    for nid in order[1:]:
        depth[nid] = depth[records[nid]["parent"]] + 1
    horizon = max(depth.values())
    if horizon < 1:
        raise InvalidTree("tree needs at least one period")
    for nid in order:
        k = len(kids[nid])
        if k == 0 and depth[nid] != horizon:
            raise InvalidTree(f"leaf {nid!r} at time {depth[nid]} before the horizon {horizon}")
        if k == 1:
            raise InvalidTree(f"node {nid!r} has a single child")
        if k > MAX_BRANCHING:
            raise InvalidTree(f"node {nid!r} has {k} children (max {MAX_BRANCHING})")
        if k:
            total = sum(prob[index[c]] for c in kids[nid])
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ProbabilitySumMismatch(
                    f"children of {nid!r} have probabilities summing to {total!r}")
    return MarketTree(order, parent, prob, prices)


def tree_from_levels(root_prices, branches, horizon=1):
    """Recombining-free tree where every node branches the same way.

    ``branches`` is a list of ``(prob, price_ratio_vector)`` pairs applied
    multiplicatively to the risky prices at every node.  Handy for fixtures.
    """
    root = np.atleast_1d(np.asarray(root_prices, dtype=float))
    spec = [{"id": 0, "parent": None, "prob": 1, "prices": [1.0, *root]}]
    frontier = [(0, root)]
    next_id = 1
    for _ in range(horizon):
        new = []
        for pid, s in frontier:
            for p, ratio in branches:
                child = s * np.atleast_1d(np.asarray(ratio, dtype=float))
                spec.append({"id": next_id, "parent": pid, "prob": p, "prices": [1.0, *child]})
                new.append((next_id, child))
                next_id += 1
        frontier = new
    return build_tree(spec)


# ---------------------------------------------------------------------------
# gains and replication


def gains_process(tree: MarketTree, strategy) -> np.ndarray:
    """Accumulated gains of a strategy at every node (zero at the root)."""
    pos = tree.strategy(strategy)
    g = np.zeros(tree.n_nodes)
    for lvl in tree.levels[1:]:
        par = tree.parent[lvl]
        g[lvl] = g[par] + np.einsum("ij,ij->i", pos[par], tree.dS[lvl])
    return g


def terminal_gains(tree: MarketTree, strategy) -> Claim:
    return gains_process(tree, strategy)[tree.first_leaf:]


def replicate(tree: MarketTree, claim, tol: float = REPLICATION_TOL):
    """Return ``(cost, strategy)`` replicating ``claim``, or ``None``.

    The claim is projected (ordinary least squares) onto the span of constants
    and one-period gains; it counts as replicable when the max-norm residual is
    at most ``tol * (1 + max|claim|)``.
    """
    b = tree.claim(claim)
    phi = tree.replication_basis()
    coef, *_ = np.linalg.lstsq(phi, b, rcond=None)
    resid = b - phi @ coef
    if np.max(np.abs(resid)) > tol * (1.0 + np.max(np.abs(b))):
        return None
    theta = coef[1:].reshape(tree.n_internal, tree.num_assets)
    return float(coef[0]), TradingStrategy(theta)


def is_replicable(tree, claim, tol=REPLICATION_TOL) -> bool:
    return replicate(tree, claim, tol) is not None


def risk_equivalent(tree: MarketTree, c1, c2, tol: float = REPLICATION_TOL) -> bool:
    return replicate(tree, tree.claim(c1) - tree.claim(c2), tol) is not None


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class AgentProfile:
    gamma: float
    endowment: np.ndarray
    name: str = ""

    def __post_init__(self):
        from .pricing import check_gamma

        object.__setattr__(self, "gamma", check_gamma(self.gamma))
        e = np.array(self.endowment, dtype=float)
        e.flags.writeable = False
        object.__setattr__(self, "endowment", e)


DEFAULT_SOLVER = {"tol": 1e-12, "max_iter": 200}


@dataclass(frozen=True, eq=False)
class Scenario:
    tree: MarketTree
    agents: tuple
    claims: Mapping[str, np.ndarray]
    task: Mapping[str, Any] = field(default_factory=dict)
    solver: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULT_SOLVER))
    basisrisk: Mapping[str, Any] | None = None


def load_scenario(text: str) -> Scenario:
    """Parse a YAML (or JSON) scenario document.

    Top-level keys: ``tree`` (node records), ``claims`` (name to leaf-ordered
    value list, or to a ``{leaf_id: value}`` mapping), ``agents`` (list of
    ``{gamma, endowment}`` where ``endowment`` names a claim or is omitted for
    zero), optional ``task``, ``solver`` and ``basisrisk`` sections.
    """
    import yaml

    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"scenario is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("scenario must be a mapping at top level")
    unknown = set(doc) - {"tree", "claims", "agents", "task", "solver", "basisrisk"}
    if unknown:
        raise SchemaViolation(f"unknown top-level keys: {sorted(unknown)}")

    if "tree" not in doc:
        if "basisrisk" in doc and not (doc.get("claims") or doc.get("agents")):
            br = doc["basisrisk"]
            if not isinstance(br, dict):
                raise SchemaViolation("'basisrisk' must be a mapping")
            return Scenario(tree=None, agents=(), claims={}, task=dict(doc.get("task") or {}),
                            solver=dict(DEFAULT_SOLVER), basisrisk=br)
        raise SchemaViolation("scenario needs a 'tree' section")
    if not isinstance(doc["tree"], list) or not all(isinstance(r, dict) for r in doc["tree"]):
        raise SchemaViolation("'tree' must be a list of node mappings")
    for rec in doc["tree"]:
        extra = set(rec) - {"id", "parent", "prob", "prices"}
        if extra:
            raise SchemaViolation(f"node {rec.get('id')!r}: unknown keys {sorted(extra)}")
    tree = build_tree(doc["tree"])

    claims = {}
    raw_claims = doc.get("claims") or {}
    if not isinstance(raw_claims, dict):
        raise SchemaViolation("'claims' must map names to value arrays")
    for name, vals in raw_claims.items():
        claims[str(name)] = _read_claim(tree, name, vals)

    agents = []
    raw_agents = doc.get("agents") or []
    if not isinstance(raw_agents, list) or len(raw_agents) > 2:
        raise SchemaViolation("'agents' must be a list of one or two agents")
    for k, rec in enumerate(raw_agents):
        if not isinstance(rec, dict) or "gamma" not in rec:
            raise SchemaViolation(f"agent {k}: needs a 'gamma'")
        ename = rec.get("endowment")
        if ename is None:
            endow = np.zeros(tree.n_leaves)
        elif str(ename) in claims:
            endow = claims[str(ename)]
        else:
            raise SchemaViolation(f"agent {k}: endowment {ename!r} is not a declared claim")
        try:
            agents.append(AgentProfile(float(rec["gamma"]), endow, name=str(ename or "zero")))
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(f"agent {k}: {exc}") from exc

    task = dict(doc.get("task") or {})
    for key in ("claim", "claims"):
        names = task.get(key)
        if names is None:
            continue
        for nm in ([names] if isinstance(names, str) else names):
            if str(nm) not in claims:
                raise SchemaViolation(f"task.{key}: unknown claim {nm!r}")
    solver = dict(DEFAULT_SOLVER)
    raw_solver = doc.get("solver") or {}
    if not isinstance(raw_solver, dict):
        raise SchemaViolation("'solver' must be a mapping")
    bad = set(raw_solver) - set(DEFAULT_SOLVER)
    if bad:
        raise SchemaViolation(f"unknown solver keys: {sorted(bad)}")
    solver.update({k: float(v) if k != "max_iter" else int(v) for k, v in raw_solver.items()})
    br = doc.get("basisrisk")
    if br is not None and not isinstance(br, dict):
        raise SchemaViolation("'basisrisk' must be a mapping")
    return Scenario(tree=tree, agents=tuple(agents), claims=claims, task=task,
                    solver=solver, basisrisk=br)


def _read_claim(tree, name, vals):
    if isinstance(vals, dict):
        leaf_ids = set(tree.leaf_ids)
        by_str = {str(k): k for k in tree.leaf_ids}
        out = np.full(tree.n_leaves, np.nan)
        for key, v in vals.items():
            lid = key if key in leaf_ids else by_str.get(str(key))
            if lid is None:
                raise SchemaViolation(f"claim {name!r}: {key!r} is not a leaf of the tree")
            out[tree.index[lid] - tree.first_leaf] = float(v)
        if np.any(np.isnan(out)):
            raise SchemaViolation(f"claim {name!r}: values missing for some leaves")
        return out
    if not isinstance(vals, list):
        raise SchemaViolation(f"claim {name!r}: expected a list or a leaf mapping")
    if len(vals) != tree.n_leaves:
        raise SchemaViolation(
            f"claim {name!r}: {len(vals)} values for {tree.n_leaves} leaves")
    try:
        return tree.claim([float(v) for v in vals])
    except (TypeError, ValueError, ValidationError) as exc:
        raise SchemaViolation(f"claim {name!r}: {exc}") from exc
