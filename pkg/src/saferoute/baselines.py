"""Comparison routing policies.

Every function returns a boolean routing mask (``True`` = surrogate) or a
single ``Decision``, so all methods can be scored by
``conformal.evaluate_routing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from saferoute.conformal import Decision
from saferoute.errors import InvalidArgumentError
from saferoute.predictors import RidgeModel

__all__ = [
    "NAIVE_THRESHOLD",
    "RegressionConformalPolicy",
    "conformal_index",
    "fit_regression_conformal",
    "regression_route",
    "regression_route_many",
    "naive_route",
    "naive_route_many",
    "oracle_route",
    "oracle_route_many",
    "random_matched_route",
    "always_route",
]

NAIVE_THRESHOLD = 0.5


@dataclass(frozen=True)
class RegressionConformalPolicy:
    model: RidgeModel
    q_hat: float
    alpha: float
    tau: float

    @property
    def routes_nothing(self) -> bool:
        return math.isinf(self.q_hat)


def conformal_index(n: int, alpha: float) -> int:
    """1-based rank ``ceil((n + 1)(1 - alpha))`` of the split-conformal quantile."""
    raw = (n + 1) * (1.0 - alpha)
    r = round(raw)
    # guard against 90.00000000000001 -> 91
    return int(r) if abs(raw - r) < 1e-9 else math.ceil(raw)


def fit_regression_conformal(X, d, model: RidgeModel, alpha: float, tau: float) -> RegressionConformalPolicy:
    """Signed-residual split conformal on a pre-fit degradation regressor."""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    d = np.asarray(d, dtype=float).ravel()
    n = d.size
    if n == 0:
        raise InvalidArgumentError("calibration set is empty")
    residuals = d - model.predict(X)
    if residuals.size != n:
        raise InvalidArgumentError("features and degradations differ in length")
    k = conformal_index(n, alpha)
    q_hat = math.inf if k > n else float(np.sort(residuals)[k - 1])
    return RegressionConformalPolicy(model, q_hat, alpha, tau)


def regression_route_many(policy: RegressionConformalPolicy, X, tau: float | None = None) -> np.ndarray:
    tau = policy.tau if tau is None else tau
    d_hat = policy.model.predict(X)
    if policy.routes_nothing:
        return np.zeros(d_hat.shape, dtype=bool)
    return d_hat + policy.q_hat <= tau


def regression_route(policy: RegressionConformalPolicy, x, tau: float | None = None) -> Decision:
    """Surrogate iff the predicted degradation plus ``q_hat`` is within tolerance."""
    routed = bool(regression_route_many(policy, np.atleast_2d(x), tau)[0])
    return Decision.SURROGATE if routed else Decision.REFERENCE


def naive_route(s: float) -> Decision:
    return Decision.SURROGATE if s >= NAIVE_THRESHOLD else Decision.REFERENCE


def naive_route_many(scores) -> np.ndarray:
    return np.asarray(scores, dtype=float) >= NAIVE_THRESHOLD


def oracle_route(d: float, tau: float) -> Decision:
    return Decision.SURROGATE if d <= tau else Decision.REFERENCE


def oracle_route_many(d, tau: float) -> np.ndarray:
    return np.asarray(d, dtype=float) <= tau


def random_matched_route(coverage_target: float, seed: int, n: int) -> np.ndarray:
    """Independent ``Bernoulli(coverage_target)`` routing decisions."""
    if not 0.0 <= coverage_target <= 1.0:
        raise InvalidArgumentError("coverage_target must lie in [0, 1]")
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    return np.random.default_rng(seed).random(n) < coverage_target


def always_route(which: str | Decision, n: int) -> np.ndarray:
    """Always-BB routes everything to the reference; Always-CM routes everything to the surrogate."""
    which = Decision(which)
    return np.full(n, which is Decision.SURROGATE, dtype=bool)
