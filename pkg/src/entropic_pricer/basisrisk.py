"""Gaussian basis-risk model priced by quadrature.

A traded asset with constant Sharpe ratio ``lambda = mu / sigma`` and a
non-traded factor ``dY = b dt + a dW`` whose noise has correlation ``rho``
with the asset.  Under the minimal-entropy measure ``Y_T`` is Gaussian with
mean ``y0 + b T - rho a lambda T`` and variance ``a^2 T``, and the writer
price of ``g(Y_T)`` is

    1 / (gamma (1 - rho^2)) * log E^{Q0}[exp(gamma (1 - rho^2) g(Y_T))].

Payoffs are piecewise-linear tables (:class:`PayoffFn`).  Expectations of
exponentials of payoffs are computed in log space.  Smooth (linear) payoffs
use Gauss-Hermite rules.  Tables with kinks use composite Gauss-Legendre
panels split at the kinks.  Every rule is checked by doubling its order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp, roots_hermitenorm

from .errors import GammaOutOfRange, QuadratureNotConverged, ValidationError

QUAD_TOL = 1e-8
GH_NODES = 64
PANEL_NODES = 8
PANEL_WIDTH = 0.5
TAIL_WIDTH = 12.0
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class BasisRiskModel:
    mu: float
    sigma: float
    b: float
    a: float
    rho: float
    y0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0 or not self.a > 0 or not self.T > 0:
            raise ValidationError("sigma, a and T must be positive")
        if not -1 < self.rho < 1:
            raise ValidationError("rho must lie strictly between -1 and 1")
        vals = (self.mu, self.sigma, self.b, self.a, self.rho, self.y0, self.T)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("model parameters must be finite")

    @property
    def sharpe(self) -> float:
        return self.mu / self.sigma


def q0_law(model: BasisRiskModel):
    """(mean, variance) of Y_T under the minimal-entropy martingale measure."""
    m = model.y0 + model.b * model.T - model.rho * model.a * model.sharpe * model.T
    return m, model.a ** 2 * model.T


def q0_asset_drift(model: BasisRiskModel) -> float:
    """Drift of the traded asset's log-return noise under Q0 (zero by construction)."""
    return model.mu - model.sigma * model.sharpe


# ---------------------------------------------------------------------------
# payoffs


class PayoffFn:
    """Piecewise-linear function of the factor value.

    Between ``knots`` the function interpolates ``values`` linearly; outside
    it continues with ``left_slope`` / ``right_slope`` (zero means clamped).
    Sums, differences and scalar multiples are again tables.
    """

    def __init__(self, knots, values, left_slope=0.0, right_slope=0.0):
        y = np.atleast_1d(np.asarray(knots, dtype=float))
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if y.ndim != 1 or y.shape != v.shape or len(y) == 0:
            raise ValidationError("payoff table needs matching non-empty knot and value lists")
        if np.any(np.diff(y) <= 0):
            raise ValidationError("payoff knots must be strictly increasing")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))
                and math.isfinite(left_slope) and math.isfinite(right_slope)):
            raise ValidationError("payoff table must be finite")
        self.knots, self.values = y, v
        self.left_slope, self.right_slope = float(left_slope), float(right_slope)

    @classmethod
    def linear(cls, slope, intercept=0.0):
        return cls([0.0], [intercept], slope, slope)

    @classmethod
    def constant(cls, c):
        return cls([0.0], [c])

    @classmethod
    def from_spec(cls, spec):
        if isinstance(spec, (int, float)):
            return cls.constant(float(spec))
        if "linear" in spec:
            slope, intercept = spec["linear"]
            return cls.linear(float(slope), float(intercept))
        return cls(spec["y"], spec["v"], spec.get("left_slope", 0.0), spec.get("right_slope", 0.0))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.knots, self.values)
        out = np.where(y < self.knots[0], self.values[0] + self.left_slope * (y - self.knots[0]), out)
        out = np.where(y > self.knots[-1], self.values[-1] + self.right_slope * (y - self.knots[-1]), out)
        return out

    def kinks(self):
        """Points where the derivative may jump."""
        slopes = np.concatenate([[self.left_slope], np.diff(self.values) / np.diff(self.knots),
                                 [self.right_slope]])
        jump = np.abs(np.diff(slopes)) > 1e-14 * (1 + np.abs(slopes[:-1]))
        return self.knots[jump]

    @property
    def is_linear(self):
        return len(self.kinks()) == 0

    @property
    def bounded(self):
        return self.left_slope == 0 and self.right_slope == 0

    def sup(self):
        if not self.bounded:
            return math.inf
        return float(self.values.max())

    def _combine(self, other, op):
        if isinstance(other, (int, float)):
            other = PayoffFn.constant(other)
        y = np.union1d(self.knots, other.knots)
        return PayoffFn(y, op(self(y), other(y)), op(self.left_slope, other.left_slope),
                        op(self.right_slope, other.right_slope))

    def __add__(self, other):
        return self._combine(other, lambda u, v: u + v)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, lambda u, v: u - v)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        k = float(k)
        return PayoffFn(self.knots, k * self.values, k * self.left_slope, k * self.right_slope)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return (f"PayoffFn(knots={self.knots.tolist()}, values={self.values.tolist()}, "
                f"left_slope={self.left_slope}, right_slope={self.right_slope})")


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=16)
def _hermite(n):
    z, w = roots_hermitenorm(n)
    return z, np.log(w) - _LOG_SQRT_2PI


@lru_cache(maxsize=16)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _panel_rule(lo, hi, breaks, n, rate=None):
    """Composite Gauss-Legendre rule on [lo, hi] against the standard normal density.

    Panels never straddle a break point and are at most ``PANEL_WIDTH`` wide;
    ``rate(a, b)`` bounds |d/dz log h| on a segment and narrows the panels so
    the exponential part of the integrand changes by a bounded factor.
    """
    pts = np.unique(np.concatenate([[lo, hi], [b for b in breaks if lo < b < hi]]))
    edges = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        width = PANEL_WIDTH
        if rate is not None:
            r = rate(a, b)
            if r > 0:
                width = min(width, 4.0 / r)
        k = max(1, int(math.ceil((b - a) / width)))
        edges.extend(np.linspace(a, b, k + 1)[1:])
    edges = np.asarray(edges)
    x, w = _legendre(n)
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    z = (left + half * (1 + x)).ravel()
    logw = (np.log(half * w)).ravel() - 0.5 * z ** 2 - _LOG_SQRT_2PI
    return z, logw


def _linear_rate(fns, scale, m, s):
    """Rate bound for exp(scale * f) with each f linear between break points."""
    def rate(a, b):
        ya, yb = m + s * a, m + s * b
        return max(abs(scale) * abs(f(yb) - f(ya)) / (b - a) for f in fns)
    return rate


def _rule(law, c, g, order):
    """Standard-normal nodes ``z`` and log weights for E[exp(c g(m + s z))]."""
    m, var = law
    s = math.sqrt(var)
    kinks = g.kinks()
    if len(kinks) == 0 and abs(c * s * g.left_slope) <= 4.0:
        return _hermite(GH_NODES * order)
    kz = (kinks - m) / s if len(kinks) else np.zeros(1)
    lo = min(kz.min(), c * s * g.left_slope) - TAIL_WIDTH
    hi = max(kz.max(), c * s * g.right_slope) + TAIL_WIDTH
    return _panel_rule(lo, hi, tuple(kz), PANEL_NODES * order, _linear_rate([g], c, m, s))


def log_mgf(law, c, g: PayoffFn) -> float:
    """log E[exp(c g(Y))] for Y ~ N(law) with an order-doubling convergence check."""
    if c == 0:
        return 0.0
    m, var = law
    s = math.sqrt(var)
    out = []
    for order in (1, 2):
        z, logw = _rule(law, c, g, order)
        out.append(float(logsumexp(logw + c * g(m + s * z))))
    if abs(out[1] - out[0]) > QUAD_TOL * abs(c):
        raise QuadratureNotConverged(
            f"quadrature changed by {abs(out[1] - out[0]) / abs(c):.3g} on doubling")
    return out[1]


def expect(law, fn, kinks=()) -> float:
    """E[fn(Y)] for a bounded vectorised ``fn`` that is smooth away from ``kinks``."""
    m, var = law
    s = math.sqrt(var)
    kz = tuple((np.asarray(kinks, dtype=float) - m) / s) or (0.0,)
    out = []
    for order in (1, 2):
        z, logw = _panel_rule(min(kz) - TAIL_WIDTH, max(kz) + TAIL_WIDTH, kz, PANEL_NODES * order)
        out.append(float(np.exp(logw) @ fn(m + s * z)))
    if abs(out[1] - out[0]) > QUAD_TOL * (1 + abs(out[1])):
        raise QuadratureNotConverged("expectation changed on doubling")
    return out[1]


# ---------------------------------------------------------------------------
# prices


def _check_gamma(gamma):
    g = float(gamma)
    if not (1e-6 <= g <= 1e6):
        raise GammaOutOfRange(f"risk aversion {gamma!r} outside [1e-06, 1e+06]")
    return g


def closed_form_price(model: BasisRiskModel, gamma, g: PayoffFn) -> float:
    """Unconditional writer price of ``g(Y_T)``."""
    gamma = _check_gamma(gamma)
    c = gamma * (1 - model.rho ** 2)
    return log_mgf(q0_law(model), c, g) / c


def conditional_price(model: BasisRiskModel, gamma, gE: PayoffFn, gB: PayoffFn) -> float:
    """Writer price of ``gB(Y_T)`` for an agent endowed with ``gE(Y_T)``."""
    return closed_form_price(model, gamma, gB - gE) - closed_form_price(model, gamma, -gE)


def conditional_buyer_price(model, gamma, gE, gB) -> float:
    return -conditional_price(model, gamma, gE, -gB)


def agreement_check(model: BasisRiskModel, agent1, agent2, g: PayoffFn) -> bool:
    """Whether agent 1 (writer) and agent 2 (buyer) can agree on a price for ``g``.

    Evaluates the moment inequality in logarithmic form, with every payoff
    scaled by ``1 - rho^2``.
    """
    (g1, e1), (g2, e2) = agent1, agent2
    g1, g2 = _check_gamma(g1), _check_gamma(g2)
    k = 1 - model.rho ** 2
    law = q0_law(model)
    Bt, E1t, E2t = g * k, e1 * k, e2 * k
    lhs = (g2 / g1) * (log_mgf(law, g1, Bt - E1t) - log_mgf(law, g1, -E1t))
    rhs = log_mgf(law, g2, -E2t) - log_mgf(law, g2, -E2t - Bt)
    return bool(lhs <= rhs)


def q0_cov(model: BasisRiskModel, f: PayoffFn, g: PayoffFn) -> float:
    law = q0_law(model)
    kinks = tuple(np.concatenate([f.kinks(), g.kinks()]))
    ef = expect(law, f, kinks)
    eg = expect(law, g, kinks)
    return expect(law, lambda y: (f(y) - ef) * (g(y) - eg), kinks)


# ---------------------------------------------------------------------------
# risk-aversion profile


@dataclass(frozen=True, eq=False)
class GammaProfile:
    gammas: np.ndarray
    values: np.ndarray
    f0: float
    slope0: float
    finf: float

    def sign_changes(self) -> int:
        d = np.sign(np.diff(self.values))
        d = d[d != 0]
        return int(np.sum(d[1:] != d[:-1]))

    def rows(self):
        return [(float(g), float(v)) for g, v in zip(self.gammas, self.values)]


def gamma_profile(x1: PayoffFn, x2: PayoffFn, gammas, law=(0.0, 1.0), log_values=False) -> GammaProfile:
    """f(gamma) = (log E[X1^gamma] - log E[X2^gamma]) / gamma for X_i = x_i(Y), Y ~ N(law).

    With ``log_values`` the tables give log X_i directly.  Also reports the
    small-gamma limit E[log X1] - E[log X2], its slope
    (Var log X1 - Var log X2) / 2, and the large-gamma limit
    log sup X1 - log sup X2.
    """
    m, var = law
    s = math.sqrt(var)
    if log_values:
        l1, l2 = x1, x2
        kinks = tuple(np.concatenate([x1.kinks(), x2.kinks()]))

        def slope(a, b):
            return _linear_rate([x1, x2], 1.0, m, s)(a, b)
    else:
        for x in (x1, x2):
            if not x.bounded or np.any(x.values <= 0):
                raise ValidationError("X must be a strictly positive bounded table")
        l1 = lambda y: np.log(x1(y))  # noqa: E731
        l2 = lambda y: np.log(x2(y))  # noqa: E731
        kinks = tuple(np.concatenate([x1.knots, x2.knots]))

        def slope(a, b):
            ya, yb = m + s * a, m + s * b
            return max(abs(x(yb) - x(ya)) / (b - a) / min(x(ya), x(yb)) for x in (x1, x2))
    kz = (np.asarray(kinks) - m) / s
    gammas = np.asarray(gammas, dtype=float)
    vals = []
    for gam in gammas:
        res = []
        for order in (1, 2):
            z, logw = _panel_rule(kz.min() - TAIL_WIDTH, kz.max() + TAIL_WIDTH, tuple(kz),
                                  PANEL_NODES * order, lambda a, b: gam * slope(a, b))
            y = m + s * z
            res.append((logsumexp(logw + gam * l1(y)) - logsumexp(logw + gam * l2(y))) / gam)
        if abs(res[1] - res[0]) > QUAD_TOL:
            raise QuadratureNotConverged(f"profile at gamma={gam} changed on doubling")
        vals.append(float(res[1]))
    e1, e2 = expect(law, l1, kinks), expect(law, l2, kinks)
    v1 = expect(law, lambda y: (l1(y) - e1) ** 2, kinks)
    v2 = expect(law, lambda y: (l2(y) - e2) ** 2, kinks)
    if log_values:
        finf = x1.sup() - x2.sup()
    else:
        finf = math.log(x1.sup()) - math.log(x2.sup())
    return GammaProfile(gammas, np.array(vals), e1 - e2, 0.5 * (v1 - v2), finf)
