"""Pure numpy version of the backward entropic induction kernel.

Mirrors ``_kernels.pyx`` step for step so that both backends produce the same
iterates up to floating point reassociation.
"""
import numpy as np

INITIAL_RADIUS = 16.0
PRECISION_FLOOR = 1e-15


def _eval(a, dS, v):
    z = a + dS @ v
    m = z.max()
    w = np.exp(z - m)
    s = w.sum()
    q = w / s
    g = q @ dS
    c = dS - g
    H = (c * q[:, None]).T @ c
    return m + np.log(s), q, g, H, np.abs(z).max()


def _newton_direction(H, g):
    d = len(g)
    trace = np.trace(H)
    ridge = 0.0
    while True:
        try:
            L = np.linalg.cholesky(H + ridge * np.eye(d))
            break
        except np.linalg.LinAlgError:
            ridge = 1e-14 * (trace + 1e-300) if ridge == 0.0 else ridge * 10.0
            if ridge > 1e10 * (trace + 1.0):
                return None
    y = np.linalg.solve(L, -g)
    return np.linalg.solve(L.T, y)


def solve_node(a, dS, tol, max_iter):
    """Minimise log-sum-exp(a + dS v); returns (status, v, psi, iters)."""
    d = dS.shape[1]
    scale = np.abs(dS).max(initial=0.0)
    tol = tol * max(1.0, scale)
    v = np.zeros(d)
    radius = INITIAL_RADIUS
    psi, q, g, H, zmag = _eval(a, dS, v)
    it = 0
    while True:
        gnorm = np.abs(g).max()
        # the gradient cannot be resolved below the rounding level of the exponents
        if gnorm <= tol or gnorm <= PRECISION_FLOOR * scale * zmag:
            return 0, v, psi, it
        if it >= max_iter:
            return 1, v, psi, it
        it += 1
        step = _newton_direction(H, g)
        if step is None:
            return 1, v, psi, it
        with np.errstate(over="ignore", invalid="ignore"):
            slope = g @ step
        descent = not -1e300 < slope < 0.0
        if descent:
            step = -g
            slope = -(g @ g)
        # trust radius on the change of the log weights
        reach = np.abs(dS @ step).max()
        capped = descent or reach > radius
        if capped:
            step = step * (radius / reach)
            slope *= radius / reach
        t = 1.0
        for _ in range(60):
            vn = v + t * step
            psi_n, qn, gn, Hn, zmag_n = _eval(a, dS, vn)
            gnorm_n = np.abs(gn).max()
            if psi_n <= psi + 1e-4 * t * slope or (
                    psi_n <= psi + 1e-13 * (1.0 + abs(psi)) and gnorm_n < gnorm):
                break
            t *= 0.5
        else:
            return 1, v, psi, it
        if capped and t == 1.0:
            radius *= 4.0
        v, psi, q, g, H, zmag = vn, psi_n, qn, gn, Hn, zmag_n


def backward(logp, dS, child_start, child_count, logv, theta, logq, iters, tol, max_iter):
    for node in range(len(child_start) - 1, -1, -1):
        s = child_start[node]
        k = child_count[node]
        a = logp[s:s + k] + logv[s:s + k]
        dsn = dS[s:s + k]
        status, v, psi, it = solve_node(a, dsn, tol, max_iter)
        iters[node] = it
        if status:
            return node
        theta[node] = v
        logv[node] = psi
        logq[s:s + k] = a + dsn @ v - psi
    return -1
