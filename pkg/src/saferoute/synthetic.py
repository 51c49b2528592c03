"""Synthetic generators with known ground truth.

The binormal model draws ``Y ~ Bernoulli(pi)`` and a latent
``z ~ Normal(mu_Y, sigma)``; the gate score is ``sigmoid(z)``.  Because the
class-conditional tails are Gaussian, the ROC curve and the routed
violation rate at any threshold have closed forms, which is what lets the
Monte Carlo checks compare a selected threshold against its true risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit, log_ndtr

from saferoute.errors import InvalidArgumentError
from saferoute.feasibility import RocCurve
from saferoute.gate import ScoredExample

__all__ = [
    "BinormalSpec",
    "BinormalSample",
    "normal_cdf",
    "separation_for_auc",
    "generate",
    "true_violation",
    "true_rates",
    "true_roc",
    "calibrated_uniform",
    "make_regression_data",
    "heteroscedastic_degradation",
]

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via ``erfc``; relative accuracy near machine precision in both tails."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _normal_ppf(p: float) -> float:
    # bisection on normal_cdf: only used to turn an AUC into a separation
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def separation_for_auc(auc: float, sigma: float = 1.0) -> float:
    """``mu1 - mu0`` giving the requested binormal AUC."""
    if not 0.0 < auc < 1.0:
        raise InvalidArgumentError("auc must lie in (0, 1)")
    return _SQRT2 * sigma * _normal_ppf(auc)


@dataclass(frozen=True)
class BinormalSpec:
    pi: float
    mu0: float = 0.0
    mu1: float = 1.0
    sigma: float = 1.0
    seed: int = 0
    auc: float = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.pi < 1.0:
            raise InvalidArgumentError(f"pi must lie in (0, 1), got {self.pi}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgumentError("sigma must be positive")
        if not (math.isfinite(self.mu0) and math.isfinite(self.mu1)):
            raise InvalidArgumentError("means must be finite")
        object.__setattr__(self, "auc", normal_cdf((self.mu1 - self.mu0) / (self.sigma * _SQRT2)))

    @classmethod
    def with_auc(cls, pi: float, auc: float, sigma: float = 1.0, seed: int = 0) -> "BinormalSpec":
        return cls(pi=pi, mu0=0.0, mu1=separation_for_auc(auc, sigma), sigma=sigma, seed=seed)


@dataclass(frozen=True)
class BinormalSample:
    scores: np.ndarray
    labels: np.ndarray
    latent: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.size)

    def examples(self) -> list[ScoredExample]:
        return [ScoredExample(float(s), int(y)) for s, y in zip(self.scores, self.labels)]


def generate(spec: BinormalSpec, n: int, rng: Optional[Union[int, np.random.Generator]] = None) -> BinormalSample:
    """Draw ``n`` labelled scores; ``rng`` overrides ``spec.seed`` when given."""
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(spec.seed if rng is None else rng)
    labels = (gen.random(n) < spec.pi).astype(np.int64)
    latent = np.where(labels == 1, spec.mu1, spec.mu0) + spec.sigma * gen.standard_normal(n)
    return BinormalSample(expit(latent), labels, latent)


def _log_tails(spec: BinormalSpec, t: float) -> tuple[float, float]:
    z = math.log(t) - math.log1p(-t)
    # log P(latent >= z) per class
    log_fpr = float(log_ndtr(-(z - spec.mu0) / spec.sigma))
    log_tpr = float(log_ndtr(-(z - spec.mu1) / spec.sigma))
    return log_fpr, log_tpr


def true_rates(spec: BinormalSpec, t: float) -> tuple[float, float]:
    """Population ``(FPR, TPR)`` of the rule ``s >= t``."""
    if t <= 0.0:
        return 1.0, 1.0
    if t >= 1.0:
        return 0.0, 0.0
    log_fpr, log_tpr = _log_tails(spec, t)
    return math.exp(log_fpr), math.exp(log_tpr)


def true_violation(spec: BinormalSpec, t: float) -> float:
    """Population violation rate among inputs with ``s >= t``.

    Evaluated from log tail probabilities, so thresholds deep in either
    tail stay accurate; the endpoints are the limits (``1 - pi`` at 0).
    """
    if math.isnan(t):
        raise InvalidArgumentError("threshold is NaN")
    if t <= 0.0:
        return 1.0 - spec.pi
    if t >= 1.0:
        if spec.mu1 == spec.mu0:
            return 1.0 - spec.pi
        return 0.0 if spec.mu1 > spec.mu0 else 1.0
    log_fpr, log_tpr = _log_tails(spec, t)
    # V = 1 / (1 + pi*TPR / ((1-pi)*FPR))
    log_odds = math.log(spec.pi) + log_tpr - math.log1p(-spec.pi) - log_fpr
    return float(expit(-log_odds))


def true_roc(spec: BinormalSpec, grid: Union[int, Sequence[float]] = 2001) -> RocCurve:
    """Population ROC sampled at latent thresholds.

    An integer ``grid`` spaces that many latent cut points over eight
    standard deviations beyond both means; a sequence is taken as score
    thresholds in (0, 1).
    """
    if isinstance(grid, (int, np.integer)):
        if grid < 2:
            raise InvalidArgumentError("grid needs at least two points")
        lo = min(spec.mu0, spec.mu1) - 8 * spec.sigma
        hi = max(spec.mu0, spec.mu1) + 8 * spec.sigma
        z = np.linspace(hi, lo, int(grid))
    else:
        t = np.sort(np.asarray(grid, dtype=float))[::-1]
        if t.size == 0 or t.min() <= 0 or t.max() >= 1:
            raise InvalidArgumentError("score thresholds must lie strictly inside (0, 1)")
        z = np.log(t) - np.log1p(-t)
    fpr = np.exp(log_ndtr(-(z - spec.mu0) / spec.sigma))
    tpr = np.exp(log_ndtr(-(z - spec.mu1) / spec.sigma))
    fpr = np.concatenate([[0.0], np.maximum.accumulate(fpr), [1.0]])
    tpr = np.concatenate([[0.0], np.maximum.accumulate(tpr), [1.0]])
    thresholds = np.concatenate([[np.inf], expit(z), [-np.inf]])
    return RocCurve(fpr, tpr, thresholds)


def calibrated_uniform(n: int, rng: Optional[Union[int, np.random.Generator]] = 0) -> tuple[np.ndarray, np.ndarray]:
    """Perfectly calibrated gate: ``s ~ Uniform(0, 1)`` and ``Y | s ~ Bernoulli(s)``."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    s = gen.random(n)
    y = (gen.random(n) < s).astype(np.int64)
    return s, y


def make_regression_data(n: int = 2000, n_features: int = 6, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Regression task where a shallow tree fails in a feature-identifiable region.

    ``y = 20 x1^2 sin(4 pi x2) cos(3 pi x3) + 3 x4 + 3 (0.2 + x1) eps``.
    The oscillating term and the noise both grow with ``x1``, so a
    depth-limited surrogate loses most against a forest when ``x1`` is
    large.  Features beyond the fourth are pure noise.
    """
    if n_features < 4:
        raise InvalidArgumentError("need at least four features")
    gen = np.random.default_rng(seed)
    X = gen.random((n, n_features))
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    wave = np.sin(4.0 * math.pi * x2) * np.cos(3.0 * math.pi * x3)
    y = 20.0 * x1**2 * wave + 3.0 * x4 + 3.0 * (0.2 + x1) * gen.standard_normal(n)
    return X, y


def heteroscedastic_degradation(n: int, rng: Optional[Union[int, np.random.Generator]] = 0
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Features ``(x1, x2, (1 - x1) x2)`` and degradations with concentrated noise.

    ``d = 3 x1 - 1 + (0.1 + 4 (1 - x1) x2) * eps``.  The mean is lowest
    where the spread can be largest, so a mean predictor plus one global
    residual quantile routes many high-variance, often unsafe inputs.  A
    classifier on the safety bit sees the spread through the third feature
    and can route only the quiet corner.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    X = gen.random((n, 3))
    X[:, 2] = (1.0 - X[:, 0]) * X[:, 1]
    d = 3.0 * X[:, 0] - 1.0 + (0.1 + 4.0 * X[:, 2]) * gen.standard_normal(n)
    return X, d
