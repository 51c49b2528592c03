"""Exact one-sided Clopper-Pearson bounds.

The upper bound on a binomial proportion after observing ``k`` events in
``n`` trials is the ``1 - delta`` quantile of ``Beta(k + 1, n - k)``.  The
regularized incomplete beta function is evaluated with the modified Lentz
continued fraction and inverted by a bracketed Newton iteration, so no
special-function library is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from saferoute.errors import InvalidArgumentError

__all__ = [
    "BinomialObservation",
    "regularized_incomplete_beta",
    "beta_quantile",
    "cp_upper_bound",
    "min_calibration_size",
]

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 20_000
_QUANTILE_TOL = 1e-10


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _check_shape(a: float, b: float) -> None:
    if not (math.isfinite(a) and math.isfinite(b)) or a <= 0 or b <= 0:
        raise InvalidArgumentError(f"beta shape parameters must be positive and finite, got a={a}, b={b}")


def _beta_cf(x: float, a: float, b: float) -> float:
    # Continued fraction for I_x(a, b) (Numerical Recipes `betacf`, Lentz form).
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``, the CDF of ``Beta(a, b)`` at ``x``."""
    _check_shape(a, b)
    if not math.isfinite(x) or x < 0.0 or x > 1.0:
        raise InvalidArgumentError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(x, a, b) / a
    return 1.0 - math.exp(log_front) * _beta_cf(1.0 - x, b, a) / b


def _beta_log_pdf(x: float, a: float, b: float) -> float:
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta(a, b)


def beta_quantile(p: float, a: float, b: float) -> float:
    """Inverse CDF of ``Beta(a, b)``.

    Newton steps are taken on ``I_x(a, b) - p`` and replaced by bisection
    whenever they leave the current bracket, so the iteration always
    converges.  The returned ``x`` satisfies ``|I_x(a, b) - p| <= 1e-10``.
    """
    _check_shape(a, b)
    if not math.isfinite(p) or p < 0.0 or p > 1.0:
        raise InvalidArgumentError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0

    lo, hi = 0.0, 1.0
    x = a / (a + b)
    for _ in range(400):
        fx = regularized_incomplete_beta(x, a, b) - p
        if fx == 0.0:
            return x
        if fx < 0.0:
            lo = x
        else:
            hi = x
        if abs(fx) < 1e-14 or hi - lo <= 2.0 * math.ulp(hi):
            break
        step_ok = False
        log_pdf = _beta_log_pdf(x, a, b)
        if log_pdf > -700.0:
            x_new = x - fx / math.exp(log_pdf)
            step_ok = lo < x_new < hi
        if not step_ok:
            # shrink geometrically toward an open endpoint: quantiles of tiny p can be ~1e-300
            if lo == 0.0:
                x_new = hi / 16.0
            elif hi == 1.0:
                x_new = 1.0 - (1.0 - lo) / 16.0
            else:
                x_new = 0.5 * (lo + hi)
        if x_new == x or not 0.0 < x_new < 1.0:
            break
        x = x_new
    return x


@dataclass(frozen=True)
class BinomialObservation:
    """``k`` unsafe points among ``n`` routed points, certified at confidence ``1 - delta``."""

    k: int
    n: int
    delta: float

    def __post_init__(self) -> None:
        _validate_kn_delta(self.k, self.n, self.delta)

    @property
    def upper_bound(self) -> float:
        return cp_upper_bound(self.k, self.n, self.delta)


def _validate_kn_delta(k: int, n: int, delta: float) -> None:
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer (no routed points?), got {n}")
    if int(k) != k or k < 0 or k > n:
        raise InvalidArgumentError(f"k must be an integer in [0, n], got k={k}, n={n}")
    if not math.isfinite(delta) or not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")


def cp_upper_bound(k: int, n: int, delta: float) -> float:
    """One-sided ``1 - delta`` Clopper-Pearson upper bound for ``k`` events in ``n`` trials.

    Returns exactly 1.0 when ``k == n``.

    >>> round(cp_upper_bound(0, 300, 0.10), 4)
    0.0076
    """
    _validate_kn_delta(k, n, delta)
    if k == n:
        return 1.0
    return beta_quantile(1.0 - delta, k + 1.0, float(n - k))


def min_calibration_size(alpha: float, delta: float) -> int:
    """Smallest ``n`` for which ``k = 0`` of ``n`` certifies a violation rate of at most ``alpha``."""
    for name, val in (("alpha", alpha), ("delta", delta)):
        if not math.isfinite(val) or not 0.0 < val < 1.0:
            raise InvalidArgumentError(f"{name} must lie strictly inside (0, 1), got {val}")
    ratio = math.log(delta) / math.log1p(-alpha)
    nearest = round(ratio)
    if abs(ratio - nearest) < 1e-9:
        return max(1, int(nearest))
    return max(1, math.ceil(ratio))
