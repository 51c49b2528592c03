"""Logistic safety gate and its ranking / calibration diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from saferoute.errors import DegenerateError, InvalidArgumentError
from saferoute.feasibility import RocCurve

__all__ = [
    "ScoredExample",
    "GateConfig",
    "GateModel",
    "train_gate",
    "constant_gate",
    "score",
    "to_arrays",
    "auc",
    "ece",
    "empirical_roc",
]

_EPS = 2.0 ** -52


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _clip_open(p: np.ndarray) -> np.ndarray:
    return np.clip(p, _EPS, 1.0 - _EPS)


@dataclass(frozen=True)
class ScoredExample:
    """Gate score with its safety label, the currency of calibration and test sets."""

    score: float
    label: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError(f"score must be finite in [0, 1], got {self.score}")
        if self.label not in (0, 1):
            raise InvalidArgumentError(f"label must be 0 or 1, got {self.label}")


def to_arrays(examples: Iterable[ScoredExample]) -> tuple[np.ndarray, np.ndarray]:
    examples = list(examples)
    s = np.array([e.score for e in examples], dtype=float)
    y = np.array([e.label for e in examples], dtype=int)
    return s, y


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InvalidArgumentError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    return s, y.astype(int)


@dataclass(frozen=True)
class GateConfig:
    # The objective is convex and the start point fixed, so `seed` does not
    # change the result; it is kept so run configs carry one seed everywhere.
    l2_strength: float = 1.0
    max_iterations: int = 1000
    tolerance: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class GateModel:
    """Standardized logistic model ``s(x) = sigmoid(w . (x - mean) / scale + b)``.

    ``platt`` is an optional ``(slope, intercept)`` applied to the logit
    before the sigmoid.
    """

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    platt: Optional[tuple[float, float]] = None
    converged: bool = True
    iterations: int = 0
    loss_history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.feature_means, dtype=float)
        sc = np.asarray(self.feature_scales, dtype=float)
        if not (w.ndim == m.ndim == sc.ndim == 1 and w.shape == m.shape == sc.shape):
            raise InvalidArgumentError("weights, feature_means and feature_scales must have equal length")
        if np.any(sc <= 0):
            raise InvalidArgumentError("feature scales must be strictly positive")
        for name, arr in (("weights", w), ("feature_means", m), ("feature_scales", sc)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_features(self) -> int:
        return int(self.weights.size)

    def logit(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise InvalidArgumentError(f"expected {self.n_features} features, got {X.shape[1]}")
        z = ((X - self.feature_means) / self.feature_scales) @ self.weights + self.bias
        if self.platt is not None:
            z = self.platt[0] * z + self.platt[1]
        return z

    def predict(self, X) -> np.ndarray:
        """Scores for each row of ``X``."""
        return _clip_open(_sigmoid(self.logit(X)))

    def with_platt(self, slope: float, intercept: float) -> "GateModel":
        return GateModel(
            self.weights, self.bias, self.feature_means, self.feature_scales,
            platt=(float(slope), float(intercept)), converged=self.converged,
            iterations=self.iterations, loss_history=self.loss_history,
        )

    def dump(self, out: TextIO) -> None:
        """Write one labelled parameter per line; floats use ``repr`` so reads are bit-exact."""
        out.write(f"n_features = {self.n_features}\n")
        out.write(f"bias = {self.bias!r}\n")
        for i in range(self.n_features):
            out.write(f"weight.{i} = {float(self.weights[i])!r}\n")
            out.write(f"mean.{i} = {float(self.feature_means[i])!r}\n")
            out.write(f"scale.{i} = {float(self.feature_scales[i])!r}\n")
        if self.platt is None:
            out.write("platt = none\n")
        else:
            out.write(f"platt.slope = {self.platt[0]!r}\n")
            out.write(f"platt.intercept = {self.platt[1]!r}\n")

    @classmethod
    def load(cls, lines: Iterable[str]) -> "GateModel":
        kv = {}
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidArgumentError(f"malformed gate line: {raw!r}")
            kv[key.strip()] = value.strip()
        try:
            d = int(kv["n_features"])
            w = [float(kv[f"weight.{i}"]) for i in range(d)]
            m = [float(kv[f"mean.{i}"]) for i in range(d)]
            sc = [float(kv[f"scale.{i}"]) for i in range(d)]
            platt = None
            if kv.get("platt") != "none":
                platt = (float(kv["platt.slope"]), float(kv["platt.intercept"]))
            return cls(np.array(w), float(kv["bias"]), np.array(m), np.array(sc), platt=platt)
        except KeyError as exc:
            raise InvalidArgumentError(f"gate file is missing {exc}") from None


def constant_gate(n_features: int, prior: float) -> GateModel:
    """Gate that scores every input with the class prior (fallback for single-class training data)."""
    p = float(np.clip(prior, _EPS, 1.0 - _EPS))
    zeros = np.zeros(n_features)
    return GateModel(zeros, math.log(p / (1.0 - p)), zeros, np.ones(n_features))


def _logistic_loss(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float) -> float:
    z = Z @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.logaddexp(0.0, z) - y * z
    return float(loss.mean() + 0.5 * lam * (w @ w) / y.size)


def _logistic_grad(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float) -> tuple[np.ndarray, float]:
    r = _sigmoid(Z @ w + b) - y
    n = y.size
    return (Z.T @ r + lam * w) / n, float(r.mean())


def train_gate(features, labels, config: GateConfig = GateConfig()) -> GateModel:
    """Fit the L2-regularized logistic gate by full-batch gradient descent.

    Each step starts from a Barzilai-Borwein step length and backtracks
    until the Armijo condition holds, so the recorded loss never increases.
    The L2 penalty ``l2_strength / 2 * |w|^2`` is added to the summed
    log-loss (bias unpenalized), matching ``C = 1 / l2_strength`` in the
    usual parametrization.  Stops when the gradient norm falls below
    ``tolerance`` or after ``max_iterations``.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).ravel()
    if X.shape[0] != y.size:
        raise InvalidArgumentError("features and labels differ in length")
    if y.size < 2:
        raise InvalidArgumentError("need at least two training examples")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    y = y.astype(float)
    if y.min() == y.max():
        raise DegenerateError("gate training labels contain a single class")

    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales <= 1e-12] = 1.0
    Z = (X - means) / scales
    lam = float(config.l2_strength)

    w = np.zeros(Z.shape[1])
    b = 0.0
    loss = _logistic_loss(Z, y, w, b, lam)
    gw, gb = _logistic_grad(Z, y, w, b, lam)
    history = [loss]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        gnorm2 = float(gw @ gw + gb * gb)
        if math.sqrt(gnorm2) < config.tolerance:
            converged = True
            it -= 1
            break
        t = step
        while True:
            w_new = w - t * gw
            b_new = b - t * gb
            loss_new = _logistic_loss(Z, y, w_new, b_new, lam)
            if loss_new <= loss - 1e-4 * t * gnorm2 or t < 1e-12:
                break
            t *= 0.5
        if loss_new > loss:
            # line search exhausted without decrease: already at numerical optimum
            converged = True
            break
        gw_new, gb_new = _logistic_grad(Z, y, w_new, b_new, lam)
        sw, sb = w_new - w, b_new - b
        dw, db = gw_new - gw, gb_new - gb
        sy = float(sw @ dw + sb * db)
        step = float(sw @ sw + sb * sb) / sy if sy > 1e-300 else 1.0
        step = min(max(step, 1e-6), 1e6)
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
        history.append(loss)
    else:
        converged = math.sqrt(float(gw @ gw + gb * gb)) < config.tolerance

    return GateModel(w, b, means, scales, converged=converged, iterations=it, loss_history=tuple(history))


def score(model: GateModel, x: Sequence[float]) -> float:
    """Gate score of a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidArgumentError("score() takes one feature vector; use GateModel.predict for matrices")
    return float(model.predict(x[None, :])[0])


def _average_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    avg = first + (counts + 1) / 2.0
    ranks = np.empty(s.size, dtype=float)
    ranks[order] = np.repeat(avg, counts)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: share of (safe, unsafe) pairs ranked correctly, ties counted 1/2."""
    s, y = _scores_labels(scores, labels)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateError("AUC needs both safe and unsafe examples")
    ranks = _average_ranks(s)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def ece(scores, labels, num_bins: int = 10) -> float:
    """Expected calibration error over ``num_bins`` equal-width bins on [0, 1]."""
    s, y = _scores_labels(scores, labels)
    if s.size == 0:
        raise InvalidArgumentError("ECE of an empty set")
    if int(num_bins) != num_bins or num_bins < 1:
        raise InvalidArgumentError(f"num_bins must be a positive integer, got {num_bins}")
    if s.min() < 0 or s.max() > 1:
        raise InvalidArgumentError("scores must lie in [0, 1]")
    idx = np.minimum((s * num_bins).astype(int), num_bins - 1)
    count = np.bincount(idx, minlength=num_bins)
    sum_s = np.bincount(idx, weights=s, minlength=num_bins)
    sum_y = np.bincount(idx, weights=y.astype(float), minlength=num_bins)
    used = count > 0
    gap = np.abs(sum_s[used] - sum_y[used])
    return float(gap.sum() / s.size)


def empirical_roc(scores, labels) -> RocCurve:
    """Operating points of ``s >= t`` for every distinct score ``t``, from (0, 0) to (1, 1)."""
    s, y = _scores_labels(scores, labels)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateError("ROC needs both safe and unsafe examples")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # last index of each block of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    fpr = np.r_[0.0, fp[last] / n0]
    tpr = np.r_[0.0, tp[last] / n1]
    thr = np.r_[np.inf, s_sorted[last]]
    return RocCurve(fpr, tpr, thr)
