"""Post-hoc score recalibration maps.

All maps are monotone non-decreasing on [0, 1], so they never reorder
scores; they are fit on the validation split and then applied to both the
calibration and test scores before threshold selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import expit

from saferoute.errors import DegenerateError, InvalidArgumentError

__all__ = [
    "CalibrationMap",
    "KINDS",
    "identity_map",
    "fit_platt",
    "fit_temperature",
    "fit_isotonic",
    "fit_beta",
    "fit_map",
    "pava",
    "apply",
    "apply_chain",
    "fit_chain",
    "chain_to_record",
    "chain_from_record",
]

KINDS = ("identity", "platt", "temperature", "isotonic", "beta")
CLAMP = 1e-6
# lower bound on slopes keeps the logistic-family maps strictly increasing
_MIN_SLOPE = 1e-6


def _clamp(s: np.ndarray) -> np.ndarray:
    return np.clip(s, CLAMP, 1.0 - CLAMP)


def _logit(s: np.ndarray) -> np.ndarray:
    s = _clamp(s)
    return np.log(s) - np.log1p(-s)


@dataclass(frozen=True)
class CalibrationMap:
    """A fitted monotone map from raw scores to recalibrated scores.

    ``params`` holds ``(slope, intercept)`` for platt, ``(T,)`` for
    temperature, ``(a, b, c)`` for beta and is empty for identity; the
    isotonic step function lives in ``breakpoints`` / ``values``.
    """

    kind: str
    params: tuple[float, ...] = ()
    breakpoints: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown calibration kind {self.kind!r}")
        if self.kind == "temperature" and not self.params[0] > 0:
            raise InvalidArgumentError("temperature must be positive")
        if self.kind == "isotonic":
            bp = np.asarray(self.breakpoints, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if bp.shape != vals.shape or bp.size == 0:
                raise InvalidArgumentError("isotonic map needs equal-length, non-empty breakpoints and values")
            if np.any(np.diff(bp) <= 0) or np.any(np.diff(vals) < 0):
                raise InvalidArgumentError("isotonic breakpoints must increase and values must not decrease")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)

    def __call__(self, s):
        return apply(self, s)


def identity_map() -> CalibrationMap:
    return CalibrationMap("identity")


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape or s.size == 0:
        raise InvalidArgumentError("scores and labels must be non-empty and of equal length")
    if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
        raise InvalidArgumentError("scores must lie in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    if y.min() == y.max():
        raise DegenerateError("recalibration needs both classes")
    return s, y.astype(float)


def _log_loss_from_logit(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _fit_linear_logit(design: np.ndarray, y: np.ndarray, x0: np.ndarray, bounds) -> np.ndarray:
    def objective(theta):
        z = design @ theta
        p = expit(z)
        grad = design.T @ (p - y) / y.size
        return _log_loss_from_logit(z, y), grad

    res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-10})
    return res.x


def fit_platt(scores, labels) -> CalibrationMap:
    """``sigmoid(a * logit(s) + b)`` by log-loss minimization, ``a > 0``."""
    s, y = _prepare(scores, labels)
    design = np.column_stack([_logit(s), np.ones_like(s)])
    a, b = _fit_linear_logit(design, y, np.array([1.0, 0.0]), [(_MIN_SLOPE, None), (None, None)])
    return CalibrationMap("platt", (float(a), float(b)))


def fit_temperature(scores, labels) -> CalibrationMap:
    """``sigmoid(logit(s) / T)`` with a single temperature ``T > 0``."""
    s, y = _prepare(scores, labels)
    z = _logit(s)

    def objective(log_t):
        return _log_loss_from_logit(z / math.exp(log_t), y)

    res = minimize_scalar(objective, bounds=(-10.0, 10.0), method="bounded", options={"xatol": 1e-10})
    return CalibrationMap("temperature", (float(math.exp(res.x)),))


def fit_beta(scores, labels) -> CalibrationMap:
    """``sigmoid(a ln s - b ln(1 - s) + c)`` with ``a, b`` projected to stay positive."""
    s, y = _prepare(scores, labels)
    s = _clamp(s)
    design = np.column_stack([np.log(s), -np.log1p(-s), np.ones_like(s)])
    a, b, c = _fit_linear_logit(
        design, y, np.array([1.0, 1.0, 0.0]), [(_MIN_SLOPE, None), (_MIN_SLOPE, None), (None, None)]
    )
    return CalibrationMap("beta", (float(a), float(b), float(c)))


def pava(y, weights=None) -> np.ndarray:
    """Pool-adjacent-violators: the non-decreasing sequence closest to ``y`` in weighted squared error."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), sizes.pop()
            m1, w1, n1 = means.pop(), wts.pop(), sizes.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wts.append(wt)
            sizes.append(n1 + n2)
    return np.repeat(np.array(means), sizes)


def fit_isotonic(scores, labels) -> CalibrationMap:
    """Step function from PAVA on score-sorted labels.

    Tied scores are pooled first.  Queries take the value of the last
    breakpoint at or below them; below the first breakpoint the first value.
    """
    s, y = _prepare(scores, labels)
    uniq, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y)
    fitted = pava(sums / counts, counts.astype(float))
    # collapse runs of equal fitted values into one breakpoint each
    keep = np.r_[True, fitted[1:] != fitted[:-1]]
    return CalibrationMap("isotonic", breakpoints=uniq[keep], values=fitted[keep])


def fit_map(kind: str, scores, labels) -> CalibrationMap:
    if kind in ("identity", "none"):
        return identity_map()
    fitters = {"platt": fit_platt, "temperature": fit_temperature, "isotonic": fit_isotonic, "beta": fit_beta}
    if kind not in fitters:
        raise InvalidArgumentError(f"unknown recalibration {kind!r}; choose from none/{'/'.join(fitters)}")
    return fitters[kind](scores, labels)


def apply(cmap: CalibrationMap, s):
    """Apply a calibration map to a score or array of scores."""
    arr = np.asarray(s, dtype=float)
    if cmap.kind == "identity":
        out = arr.copy()
    elif cmap.kind == "platt":
        a, b = cmap.params
        out = expit(a * _logit(arr) + b)
    elif cmap.kind == "temperature":
        out = expit(_logit(arr) / cmap.params[0])
    elif cmap.kind == "beta":
        a, b, c = cmap.params
        arr_c = _clamp(arr)
        out = expit(a * np.log(arr_c) - b * np.log1p(-arr_c) + c)
    else:
        idx = np.searchsorted(cmap.breakpoints, arr, side="right") - 1
        out = cmap.values[np.clip(idx, 0, cmap.values.size - 1)]
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def fit_chain(kind: str, scores, labels, mode: str = "replace") -> list[CalibrationMap]:
    """Maps to apply in order.

    ``replace`` fits ``kind`` on the raw scores.  ``stack`` first fits
    Platt scaling, then fits ``kind`` on the Platt-scaled scores.
    """
    if mode not in ("replace", "stack"):
        raise InvalidArgumentError(f"recalibration mode must be replace or stack, got {mode!r}")
    if mode == "replace" or kind == "platt":
        return [fit_map(kind, scores, labels)]
    first = fit_platt(scores, labels)
    return [first, fit_map(kind, apply(first, scores), labels)]


def apply_chain(maps: Sequence[CalibrationMap], s):
    out = s
    for cmap in maps:
        out = apply(cmap, out)
    if not maps:
        arr = np.asarray(out, dtype=float)
        return float(arr) if arr.ndim == 0 else arr
    return out


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def chain_to_record(maps: Sequence[CalibrationMap]) -> dict[str, str]:
    """Flat ``key -> value`` strings; floats use ``repr`` so they round-trip exactly."""
    rec = {"recalibration.count": str(len(maps))}
    for i, cmap in enumerate(maps):
        pre = f"recalibration.{i}."
        rec[pre + "kind"] = cmap.kind
        rec[pre + "params"] = ",".join(repr(float(v)) for v in cmap.params)
        if cmap.kind == "isotonic":
            rec[pre + "breakpoints"] = ",".join(repr(float(v)) for v in cmap.breakpoints)
            rec[pre + "values"] = ",".join(repr(float(v)) for v in cmap.values)
    return rec


def chain_from_record(rec: Mapping[str, str]) -> list[CalibrationMap]:
    try:
        count = int(rec.get("recalibration.count", "0"))
        maps = []
        for i in range(count):
            pre = f"recalibration.{i}."
            kind = rec[pre + "kind"]
            params = tuple(_floats(rec.get(pre + "params", "")))
            if kind == "isotonic":
                maps.append(CalibrationMap(kind, params, np.array(_floats(rec[pre + "breakpoints"])),
                                           np.array(_floats(rec[pre + "values"]))))
            else:
                maps.append(CalibrationMap(kind, params))
        return maps
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"bad recalibration record: {exc}") from None
