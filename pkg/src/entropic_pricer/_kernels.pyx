# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backward entropic induction.

At each internal node we minimise the convex function

    psi(v) = log sum_c exp(a_c + v . dS_c),   a_c = log p_c + logV_c,

by damped Newton with Armijo backtracking and store logV_node = min psi.
Nodes are visited in reverse breadth-first order so children are always
finished before their parent.  The loop runs without the GIL.
"""
from libc.math cimport exp, log, fabs, sqrt

cdef enum:
    MAXK = 16
    MAXD = 4

cdef double INITIAL_RADIUS = 16.0
cdef double PRECISION_FLOOR = 1e-15


cdef double _eval(int k, int d, const double* a, const double* dS, const double* v,
                  double* q, double* g, double* H, double* zmag) noexcept nogil:
    cdef double z[MAXK]
    cdef double m = -1e308, s = 0.0, t
    cdef int c, i, j
    zmag[0] = 0.0
    for c in range(k):
        t = a[c]
        for i in range(d):
            t += v[i] * dS[c * d + i]
        z[c] = t
        if t > m:
            m = t
        if fabs(t) > zmag[0]:
            zmag[0] = fabs(t)
    for c in range(k):
        q[c] = exp(z[c] - m)
        s += q[c]
    for c in range(k):
        q[c] /= s
    for i in range(d):
        t = 0.0
        for c in range(k):
            t += q[c] * dS[c * d + i]
        g[i] = t
    for i in range(d):
        for j in range(i + 1):
            t = 0.0
            for c in range(k):
                t += q[c] * (dS[c * d + i] - g[i]) * (dS[c * d + j] - g[j])
            H[i * d + j] = t
            H[j * d + i] = t
    return m + log(s)


cdef int _cholesky_solve(int d, const double* H, double ridge, const double* rhs,
                         double* x) noexcept nogil:
    cdef double L[MAXD * MAXD]
    cdef double y[MAXD]
    cdef int i, j, l
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = H[i * d + j]
            if i == j:
                s += ridge
            for l in range(j):
                s -= L[i * d + l] * L[j * d + l]
            if i == j:
                if s <= 0.0:
                    return 1
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
    for i in range(d):
        s = rhs[i]
        for l in range(i):
            s -= L[i * d + l] * y[l]
        y[i] = s / L[i * d + i]
    for i in range(d - 1, -1, -1):
        s = y[i]
        for l in range(i + 1, d):
            s -= L[l * d + i] * x[l]
        x[i] = s / L[i * d + i]
    return 0


cdef int _solve_node(int k, int d, const double* a, const double* dS, double tol,
                     int max_iter, double* v, double* q, double* psi_out,
                     int* iters) noexcept nogil:
    cdef double g[MAXD]
    cdef double H[MAXD * MAXD]
    cdef double step[MAXD]
    cdef double vn[MAXD]
    cdef double gn_[MAXD]
    cdef double Hn[MAXD * MAXD]
    cdef double qn[MAXK]
    cdef double psi, psi_n, gnorm, gnorm_n, slope, t, ridge, trace, scale = 0.0
    cdef double radius = INITIAL_RADIUS, reach, u, zmag, zmag_n
    cdef int i, c, it, ls, accepted, capped, descent

    for c in range(k * d):
        if fabs(dS[c]) > scale:
            scale = fabs(dS[c])
    tol = tol * (1.0 if scale < 1.0 else scale)
    for i in range(d):
        v[i] = 0.0
    psi = _eval(k, d, a, dS, v, q, g, H, &zmag)
    it = 0
    while True:
        gnorm = 0.0
        for i in range(d):
            if fabs(g[i]) > gnorm:
                gnorm = fabs(g[i])
        # the gradient cannot be resolved below the rounding level of the exponents
        if gnorm <= tol or gnorm <= PRECISION_FLOOR * scale * zmag:
            psi_out[0] = psi
            iters[0] = it
            return 0
        if it >= max_iter:
            iters[0] = it
            return 1
        it += 1

        for i in range(d):
            gn_[i] = -g[i]
        trace = 0.0
        for i in range(d):
            trace += H[i * d + i]
        ridge = 0.0
        while _cholesky_solve(d, H, ridge, gn_, step) != 0:
            ridge = 1e-14 * (trace + 1e-300) if ridge == 0.0 else ridge * 10.0
            if ridge > 1e10 * (trace + 1.0):
                iters[0] = it
                return 1
        slope = 0.0
        for i in range(d):
            slope += g[i] * step[i]
        descent = 0
        if not (slope < 0.0 and slope > -1e300):
            descent = 1
            slope = 0.0
            for i in range(d):
                step[i] = -g[i]
                slope -= g[i] * g[i]
        # trust radius on the change of the log weights
        reach = 0.0
        for c in range(k):
            u = 0.0
            for i in range(d):
                u += step[i] * dS[c * d + i]
            if fabs(u) > reach:
                reach = fabs(u)
        capped = 0
        if descent or reach > radius:
            for i in range(d):
                step[i] *= radius / reach
            slope *= radius / reach
            capped = 1

        t = 1.0
        accepted = 0
        for ls in range(60):
            for i in range(d):
                vn[i] = v[i] + t * step[i]
            psi_n = _eval(k, d, a, dS, vn, qn, gn_, Hn, &zmag_n)
            gnorm_n = 0.0
            for i in range(d):
                if fabs(gn_[i]) > gnorm_n:
                    gnorm_n = fabs(gn_[i])
            if psi_n <= psi + 1e-4 * t * slope or (
                    psi_n <= psi + 1e-13 * (1.0 + fabs(psi)) and gnorm_n < gnorm):
                accepted = 1
                break
            t *= 0.5
        if not accepted:
            iters[0] = it
            return 1
        if capped and t == 1.0:
            radius *= 4.0
        psi = psi_n
        zmag = zmag_n
        for i in range(d):
            v[i] = vn[i]
            g[i] = gn_[i]
        for i in range(d * d):
            H[i] = Hn[i]
        for c in range(k):
            q[c] = qn[c]


def backward(const double[::1] logp, const double[:, ::1] dS, const int[::1] child_start,
             const int[::1] child_count, double[::1] logv, double[:, ::1] theta,
             double[::1] logq, int[::1] iters, double tol, int max_iter):
    """Fill ``logv``/``theta``/``logq``/``iters`` in place.

    ``logv`` must hold the terminal log values on the leaves on entry.
    Returns the index of the first node where Newton failed, or -1.
    """
    cdef int n_int = child_start.shape[0]
    cdef int d = dS.shape[1]
    cdef int node, k, s, c, i, status = 0, bad = -1
    cdef double a[MAXK]
    cdef double q[MAXK]
    cdef double psi
    cdef int it
    if d > MAXD:
        raise ValueError("too many assets for the compiled kernel")
    with nogil:
        for node in range(n_int - 1, -1, -1):
            k = child_count[node]
            s = child_start[node]
            for c in range(k):
                a[c] = logp[s + c] + logv[s + c]
            status = _solve_node(k, d, a, &dS[s, 0], tol, max_iter, &theta[node, 0],
                                 q, &psi, &it)
            iters[node] = it
            if status != 0:
                bad = node
                break
            logv[node] = psi
            for c in range(k):
                logq[s + c] = a[c] - psi
                for i in range(d):
                    logq[s + c] += theta[node, i] * dS[s + c, i]
    return bad
