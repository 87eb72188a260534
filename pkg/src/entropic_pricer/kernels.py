"""Backend selection for the backward induction kernel.

The compiled extension is used when it imports; otherwise the numpy fallback
is used.  Setting ``ENTROPIC_PRICER_PURE=1`` forces the fallback.
"""
from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .errors import NewtonDivergence

log = logging.getLogger(__name__)

_BACKENDS = {"python": _kernels_py.backward}
try:
    from . import _kernels as _kernels_c  # type: ignore[attr-defined]

    _BACKENDS["cython"] = _kernels_c.backward
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None

if os.environ.get("ENTROPIC_PRICER_PURE", "") not in ("", "0") or "cython" not in _BACKENDS:
    BACKEND = "python"
else:
    BACKEND = "cython"
log.debug("kernel backend: %s", BACKEND)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200


def available_backends():
    return sorted(_BACKENDS)


@dataclass(frozen=True, eq=False)
class InductionResult:
    """Output of one backward sweep.

    ``logv`` holds the log value at every node, ``theta`` the dual minimiser at
    each internal node and ``logq`` the log of the conditional probability of
    each node given its parent under the induced measure (zero at the root).
    """

    logv: np.ndarray
    theta: np.ndarray
    logq: np.ndarray
    iters: np.ndarray

    @property
    def log_root(self) -> float:
        return float(self.logv[0])


def backward_induction(tree, terminal, tol=None, max_iter=None, backend=None) -> InductionResult:
    """Run the entropic backward induction with leaf log values ``terminal``."""
    tol = DEFAULT_TOL if tol is None else float(tol)
    max_iter = DEFAULT_MAX_ITER if max_iter is None else int(max_iter)
    fn = _BACKENDS[backend or BACKEND]
    arrs = tree._cache.get("kernel_arrays")
    if arrs is None:
        arrs = (
            np.ascontiguousarray(tree.log_prob),
            np.ascontiguousarray(tree.dS),
            np.ascontiguousarray(tree.child_start[:tree.n_internal], dtype=np.intc),
            np.ascontiguousarray(tree.child_count[:tree.n_internal], dtype=np.intc),
        )
        tree._cache["kernel_arrays"] = arrs
    logv = np.empty(tree.n_nodes)
    logv[tree.first_leaf:] = terminal
    theta = np.zeros((tree.n_internal, tree.num_assets))
    logq = np.zeros(tree.n_nodes)
    iters = np.zeros(tree.n_internal, dtype=np.intc)
    bad = fn(*arrs, logv, theta, logq, iters, tol, max_iter)
    if bad >= 0:
        raise NewtonDivergence(
            f"Newton failed at node {tree.ids[bad]!r} after {iters[bad]} iterations")
    for a in (logv, theta, logq, iters):
        a.flags.writeable = False
    return InductionResult(logv, theta, logq, iters)


@contextmanager
def solver_settings(tol=None, max_iter=None):
    """Temporarily change the default Newton tolerance and iteration cap."""
    global DEFAULT_TOL, DEFAULT_MAX_ITER
    old = DEFAULT_TOL, DEFAULT_MAX_ITER
    if tol is not None:
        DEFAULT_TOL = float(tol)
    if max_iter is not None:
        DEFAULT_MAX_ITER = int(max_iter)
    try:
        yield
    finally:
        DEFAULT_TOL, DEFAULT_MAX_ITER = old
