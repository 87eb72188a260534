"""Brute-force reference computations for testing.

Nothing here touches the Newton kernel, the measure module or the pricing
module: the only inputs are the raw tree arrays (branch probabilities,
price increments, parent links).  Every routine works by exhaustive grids
or bisection, so it is slow but easy to audit.

With ``Psi(C) = sup_Q { E^Q[C] - H(Q|P) / gamma }`` the writer price is
``Psi(B - E) - Psi(-E)``.  ``Psi`` has two dynamic-programming forms:

* dual:   Psi_n = max_q  sum q_c Psi_c - (1/gamma) sum q_c log(q_c / p_c)
          over the martingale probabilities q at node n;
* primal: Psi_n = min_theta (1/gamma) log sum p_c exp(gamma (Psi_c - theta . dS_c)).

Restricting q to a grid gives a lower bound, restricting theta gives an upper
bound, so ``dual - primal`` never exceeds the true price.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import GridTooLarge, ValidationError

MAX_POINTS = 1e8
# fixed geometric refinement near the ends of a one-dimensional polytope
BOUNDARY_OFFSETS = 2.0 ** -np.arange(8, 60)


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution.

    ``step`` is the spacing of the free polytope coordinates (in [0, 1]) and of
    the strategy coordinates on ``theta_range``.  When ``coarse_step`` is
    given the strategy search first scans ``theta_range`` at that spacing and
    then refines at ``step`` around the coarse optimum (valid because the
    objective is convex in the strategy).
    """

    step: float = 1e-4
    theta_range: tuple = (-10.0, 10.0)
    coarse_step: float | None = None

    def __post_init__(self):
        if not self.step > 0 or (self.coarse_step is not None and not self.coarse_step > 0):
            raise ValidationError("grid steps must be positive")
        if not self.theta_range[0] < self.theta_range[1]:
            raise ValidationError("theta_range must be increasing")


def _check_size(n):
    if n > MAX_POINTS:
        raise GridTooLarge(f"grid would have {n:.3g} points (limit {MAX_POINTS:.0e})")


def _children(tree, i):
    s = int(tree.child_start[i])
    return slice(s, s + int(tree.child_count[i]))


def _axis(lo, hi, step):
    n = int(np.floor((hi - lo) / step + 1e-9))
    _check_size(n + 1)
    return lo + step * np.arange(n + 1)


# ---------------------------------------------------------------------------
# martingale polytope parametrisation


def _polytope_grid(dS, step):
    """All grid points of the nodewise martingale polytope.

    Picks up to two 'free' child probabilities on a grid in [0, 1] and solves
    the martingale and normalisation constraints for the others.
    """
    k, d = dS.shape
    A = np.vstack([dS.T, np.ones(k)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    rank = np.linalg.matrix_rank(A)
    rows = []
    for i in range(d + 1):
        if np.linalg.matrix_rank(A[rows + [i]]) > len(rows):
            rows.append(i)
    A, b = A[rows], b[rows]
    m = k - rank
    if m > 2:
        raise ValidationError(f"node has {m} free polytope coordinates; at most 2 supported")
    for free in itertools.combinations(range(k), m):
        rest = [c for c in range(k) if c not in free]
        if abs(np.linalg.det(A[:, rest])) > 1e-12:
            break
    free = list(free)
    axis = _axis(0.0, 1.0, step)
    _check_size(len(axis) ** m)
    if m == 0:
        qf = np.zeros((1, 0))
    elif m == 1:
        # the feasible set is a segment in t; the entropy has unbounded slope
        # where a probability hits zero, so add geometric points at both ends
        alpha = np.linalg.solve(A[:, rest], b)
        beta = -np.linalg.solve(A[:, rest], A[:, free[0]])
        lo, hi = 0.0, 1.0
        for al, be in zip(alpha, beta):
            if be > 0:
                lo = max(lo, -al / be)
            elif be < 0:
                hi = min(hi, -al / be)
        if lo > hi:
            return np.zeros((0, k))
        offs = (hi - lo) * BOUNDARY_OFFSETS
        qf = np.concatenate([axis, [lo, hi], lo + offs, hi - offs])[:, None]
    else:
        u, v = np.meshgrid(axis, axis, indexing="ij")
        keep = u + v <= 1 + 1e-12
        qf = np.stack([u[keep], v[keep]], axis=1)
    qr = np.linalg.solve(A[:, rest], (b[:, None] - A[:, free] @ qf.T)).T
    Q = np.zeros((len(qf), k))
    Q[:, free] = qf
    Q[:, rest] = qr
    Q = Q[np.all(Q >= -1e-13, axis=1)]
    return np.clip(Q, 0.0, None)


def _xlogx_ratio(Q, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(Q > 0, Q * np.log(Q / p), 0.0).sum(axis=1)


def _dual_psi(tree, gamma, C, step):
    """Dual grid recursion; returns (Psi at every node, argmax q per node)."""
    psi = np.zeros(tree.n_nodes)
    psi[tree.first_leaf:] = C
    best = {}
    for i in range(tree.first_leaf - 1, -1, -1):
        ch = _children(tree, i)
        Q = _polytope_grid(tree.dS[ch], step)
        if len(Q) == 0:
            raise ValidationError(f"node {tree.ids[i]!r}: empty martingale polytope")
        vals = Q @ psi[ch] - _xlogx_ratio(Q, tree.prob[ch]) / gamma
        j = int(np.argmax(vals))
        psi[i] = vals[j]
        best[i] = Q[j]
    return psi, best


def _primal_node(psi_c, p, dS, gamma, grid):
    d = dS.shape[1]

    def scan(axes):
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        z = gamma * (psi_c[None, :] - pts @ dS.T) + np.log(p)[None, :]
        zm = z.max(axis=1, keepdims=True)
        vals = (zm[:, 0] + np.log(np.exp(z - zm).sum(axis=1))) / gamma
        j = int(np.argmin(vals))
        return vals[j], pts[j]

    lo, hi = grid.theta_range
    if grid.coarse_step is None:
        ax = _axis(lo, hi, grid.step)
        _check_size(len(ax) ** d)
        return scan([ax] * d)
    ax = _axis(lo, hi, grid.coarse_step)
    _check_size(len(ax) ** d)
    _, center = scan([ax] * d)
    half = 2 * grid.coarse_step
    axes = []
    for x in center:
        n = int(round(half / grid.step))
        axes.append(x + grid.step * np.arange(-n, n + 1))
    _check_size(len(axes[0]) ** d)
    return scan(axes)


def _primal_psi(tree, gamma, C, grid):
    psi = np.zeros(tree.n_nodes)
    psi[tree.first_leaf:] = C
    theta = np.zeros((tree.first_leaf, tree.num_assets))
    for i in range(tree.first_leaf - 1, -1, -1):
        ch = _children(tree, i)
        psi[i], theta[i] = _primal_node(psi[ch], tree.prob[ch], tree.dS[ch], gamma, grid)
    return psi, theta


def _arr(tree, x):
    return np.zeros(tree.n_leaves) if x is None else np.asarray(x, dtype=float)


def grid_dual_price(tree, gamma, endowment, claim, grid: GridSpec | None = None) -> float:
    """Lower bound for the writer price from a polytope grid and a strategy grid."""
    grid = grid or GridSpec()
    e, b = _arr(tree, endowment), _arr(tree, claim)
    hi, _ = _dual_psi(tree, gamma, b - e, grid.step)
    lo, _ = _primal_psi(tree, gamma, -e, grid)
    return float(hi[0] - lo[0])


def grid_dual_measure(tree, gamma, endowment, claim, grid: GridSpec | None = None) -> np.ndarray:
    """Leaf probabilities of the grid maximiser of the dual writer-price problem."""
    grid = grid or GridSpec()
    e, b = _arr(tree, endowment), _arr(tree, claim)
    _, best = _dual_psi(tree, gamma, b - e, grid.step)
    mass = np.zeros(tree.n_nodes)
    mass[0] = 1.0
    for i in range(tree.first_leaf):
        ch = _children(tree, i)
        mass[ch] = mass[i] * best[i]
    return mass[tree.first_leaf:]


def grid_entropy(tree, step=1e-4):
    """(min entropy, leaf measure) of martingale measures relative to P on the grid."""
    psi, best = _dual_psi(tree, 1.0, np.zeros(tree.n_leaves), step)
    mass = np.zeros(tree.n_nodes)
    mass[0] = 1.0
    for i in range(tree.first_leaf):
        ch = _children(tree, i)
        mass[ch] = mass[i] * best[i]
    return float(-psi[0]), mass[tree.first_leaf:]


def _utility(tree, gamma, endowment, claim, grid):
    x = _arr(tree, endowment) + _arr(tree, claim)
    psi, theta = _primal_psi(tree, gamma, -x, grid)
    # Psi(-X) = (1/gamma) log min_theta E exp(-gamma (X + theta . G))
    return -float(np.exp(gamma * psi[0])), theta


def grid_strategy_utility(tree, gamma, endowment, claim, grid: GridSpec | None = None) -> float:
    """Lower bound for the indirect utility u(B|E) from a strategy grid."""
    return _utility(tree, gamma, endowment, claim, grid or GridSpec())[0]


def grid_strategy(tree, gamma, endowment, claim, grid: GridSpec | None = None) -> np.ndarray:
    """Grid-optimal positions for terminal wealth E + B (one row per internal node)."""
    return _utility(tree, gamma, endowment, claim, grid or GridSpec())[1]


# ---------------------------------------------------------------------------
# finite differences


def fd_derivatives(fn, a, h):
    """Central-difference gradient and Hessian of a scalar function."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    n = len(a)
    eye = np.eye(n) * h
    f0 = fn(a)
    grad = np.array([(fn(a + eye[i]) - fn(a - eye[i])) / (2 * h) for i in range(n)])
    hess = np.zeros((n, n))
    for i in range(n):
        hess[i, i] = (fn(a + eye[i]) - 2 * f0 + fn(a - eye[i])) / h ** 2
        for j in range(i):
            v = (fn(a + eye[i] + eye[j]) - fn(a + eye[i] - eye[j])
                 - fn(a - eye[i] + eye[j]) + fn(a - eye[i] - eye[j])) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = v
    return grad, hess


# ---------------------------------------------------------------------------
# grid equilibrium (one claim, one risky asset)


def _psi_bisection(tree, gamma, C):
    """Psi for a batch of terminal claims (rows of C) by bisection at every node."""
    C = np.atleast_2d(C)
    psi = np.zeros((len(C), tree.n_nodes))
    psi[:, tree.first_leaf:] = C
    for i in range(tree.first_leaf - 1, -1, -1):
        ch = _children(tree, i)
        ds = tree.dS[ch][:, 0]
        logp = np.log(tree.prob[ch])
        pc = psi[:, ch]

        def drift(th):
            z = gamma * (pc - th[:, None] * ds[None, :]) + logp
            w = np.exp(z - z.max(axis=1, keepdims=True))
            return (w * ds).sum(axis=1) / w.sum(axis=1)

        lo = np.full(len(C), -1.0)
        hi = np.full(len(C), 1.0)
        for _ in range(200):
            bad = drift(lo) < 0
            if not bad.any():
                break
            lo[bad] *= 2
        for _ in range(200):
            bad = drift(hi) > 0
            if not bad.any():
                break
            hi[bad] *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            pos = drift(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
            if np.all(hi - lo <= 1e-15 * (1 + np.abs(mid))):
                break
        th = 0.5 * (lo + hi)
        z = gamma * (pc - th[:, None] * ds[None, :]) + logp
        zm = z.max(axis=1)
        psi[:, i] = (zm + np.log(np.exp(z - zm[:, None]).sum(axis=1))) / gamma
    return psi[:, 0]


def excess_grid(tree, agents, claim, a_values):
    """f(a) = nu_w1(aB) - nu_b2(aB) on an array of quantities."""
    (g1, e1), (g2, e2) = agents
    e1, e2, b = _arr(tree, e1), _arr(tree, e2), _arr(tree, claim)
    a = np.asarray(a_values, dtype=float)
    w1 = _psi_bisection(tree, g1, a[:, None] * b - e1) - _psi_bisection(tree, g1, -e1)[0]
    b2 = -(_psi_bisection(tree, g2, -a[:, None] * b - e2) - _psi_bisection(tree, g2, -e2)[0])
    return w1 - b2


def grid_equilibrium(tree, agents, claim, range=(-3.0, 3.0), step=1e-4) -> float:
    """Grid minimiser of the excess objective (one claim, one risky asset)."""
    if tree.num_assets != 1:
        raise ValidationError("grid_equilibrium supports a single risky asset")
    a = _axis(range[0], range[1], step)
    _check_size(len(a) * tree.n_nodes)
    f = np.concatenate([excess_grid(tree, agents, claim, chunk)
                        for chunk in np.array_split(a, max(1, len(a) // 4096))])
    return float(a[int(np.argmin(f))])
