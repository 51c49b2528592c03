"""Closed-form feasibility of safe routing.

A routed set ``{s >= t}`` meets a violation budget ``alpha`` exactly when
its operating point satisfies ``TPR >= C * FPR`` with

    C(pi, alpha) = (1 - pi)(1 - alpha) / (pi * alpha),

the *critical ratio*.  Scalar AUC levels that are sufficient for such a
point to exist are the critical AUC ``min(1, C / 2)`` (any ROC) and the
tight AUC ``1 - 1 / (2C)`` (concave ROC).  Empirical ROC curves are checked
on their achieved operating points only; nothing is interpolated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from saferoute.errors import DomainError, InvalidArgumentError
from saferoute.exact_binomial import cp_upper_bound

__all__ = [
    "RiskSpec",
    "RocCurve",
    "RocFeasibility",
    "FeasibilityReport",
    "critical_ratio",
    "critical_auc",
    "tight_auc",
    "coverage_lower_bound",
    "violation_rate",
    "roc_feasible",
    "feasibility_report",
    "estimate_pi",
    "feasibility_grid",
    "write_feasibility_grid",
]

GRID_HEADER = ("pi", "alpha", "phi_c", "phi_c_star")


def _check_open_unit(name: str, value: float) -> None:
    if not math.isfinite(value) or not 0.0 < value < 1.0:
        raise InvalidArgumentError(f"{name} must lie in (0, 1), got {value}")


def _check_closed_unit(name: str, value: float) -> None:
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class RiskSpec:
    """Tolerance ``tau`` on degradation, routed-set budget ``alpha``, confidence ``delta``."""

    tau: float
    alpha: float
    delta: float = 0.10

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau):
            raise InvalidArgumentError(f"tau must be finite, got {self.tau}")
        _check_open_unit("alpha", self.alpha)
        _check_open_unit("delta", self.delta)


def critical_ratio(pi: float, alpha: float) -> float:
    """Minimum TPR/FPR ratio that a feasible operating point needs.

    ``+inf`` when no input is safe (``pi == 0``), ``0`` when all are.
    """
    _check_open_unit("alpha", alpha)
    _check_closed_unit("pi", pi)
    if pi == 0.0:
        return math.inf
    return (1.0 - pi) * (1.0 - alpha) / (pi * alpha)


def critical_auc(pi: float, alpha: float) -> float:
    """AUC that guarantees a feasible operating point for any ROC shape."""
    return min(1.0, critical_ratio(pi, alpha) / 2.0)


def tight_auc(pi: float, alpha: float) -> float:
    """AUC that guarantees a feasible operating point when the ROC is concave."""
    c = critical_ratio(pi, alpha)
    if c <= 1.0:
        return 0.5
    return 1.0 - 1.0 / (2.0 * c)


def coverage_lower_bound(pi: float, alpha: float, auc: float, *, require_tight: bool = True) -> float:
    """Lower bound on the best achievable coverage for a concave ROC with the given AUC.

    Evaluates ``min{1, (2 auc - 1)(1 - pi) / [(C - 1) alpha]}``.  The bound
    is only asserted for ``auc >= tight_auc(pi, alpha)``; pass
    ``require_tight=False`` to evaluate the expression itself below that
    level (needed for the equality check on two-segment ROC curves, whose
    AUC falls short of the tight level except at the kink ``u = 1/C``).
    """
    _check_closed_unit("auc", auc)
    c = critical_ratio(pi, alpha)
    if c <= 1.0:
        raise DomainError(f"critical ratio {c:.6g} <= 1: routing everything is feasible, bound is trivially 1")
    if math.isinf(c):
        raise DomainError("no safe inputs (pi = 0): coverage bound undefined")
    if require_tight and auc < tight_auc(pi, alpha):
        raise DomainError(f"auc {auc:.6g} is below the tight AUC {tight_auc(pi, alpha):.6g}; bound undefined")
    value = (2.0 * auc - 1.0) * (1.0 - pi) / ((c - 1.0) * alpha)
    return float(min(1.0, max(0.0, value)))


def violation_rate(pi: float, fpr: float, tpr: float) -> float:
    """Share of unsafe inputs among the routed set at an operating point (Bayes' rule)."""
    _check_closed_unit("pi", pi)
    _check_closed_unit("fpr", fpr)
    _check_closed_unit("tpr", tpr)
    routed = (1.0 - pi) * fpr + pi * tpr
    if routed <= 0.0:
        raise DomainError("operating point routes nothing; violation rate undefined")
    return (1.0 - pi) * fpr / routed


@dataclass(frozen=True)
class RocCurve:
    """Ordered ROC operating points.

    ``thresholds[i]`` is the score cut ``s >= t`` that realizes point
    ``i``; the origin carries ``+inf`` and the final point ``-inf`` unless
    the caller supplies thresholds.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float = field(init=False)

    def __post_init__(self) -> None:
        fpr = np.asarray(self.fpr, dtype=float)
        tpr = np.asarray(self.tpr, dtype=float)
        thr = np.asarray(self.thresholds, dtype=float)
        if fpr.ndim != 1 or fpr.shape != tpr.shape or thr.shape != fpr.shape:
            raise InvalidArgumentError("fpr, tpr and thresholds must be 1-D arrays of equal length")
        if fpr.size < 2:
            raise InvalidArgumentError("an ROC curve needs at least the two endpoints")
        if not (np.all(np.isfinite(fpr)) and np.all(np.isfinite(tpr))):
            raise InvalidArgumentError("ROC coordinates must be finite")
        if fpr.min() < 0 or fpr.max() > 1 or tpr.min() < 0 or tpr.max() > 1:
            raise InvalidArgumentError("ROC coordinates must lie in [0, 1]")
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise InvalidArgumentError("ROC points must be ordered with non-decreasing fpr and tpr")
        if fpr[0] != 0 or tpr[0] != 0 or fpr[-1] != 1 or tpr[-1] != 1:
            raise InvalidArgumentError("ROC curve must start at (0, 0) and end at (1, 1)")
        for name, arr in (("fpr", fpr), ("tpr", tpr), ("thresholds", thr)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "auc", float(np.trapezoid(tpr, fpr)))

    @classmethod
    def from_points(cls, fpr: Sequence[float], tpr: Sequence[float], thresholds: Optional[Sequence[float]] = None) -> "RocCurve":
        fpr = np.asarray(fpr, dtype=float)
        if thresholds is None:
            thresholds = np.linspace(1.0, 0.0, fpr.size)
            thresholds[0], thresholds[-1] = np.inf, -np.inf
        return cls(fpr, np.asarray(tpr, dtype=float), np.asarray(thresholds, dtype=float))

    def __len__(self) -> int:
        return int(self.fpr.size)

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def is_concave(self, atol: float = 1e-12) -> bool:
        """True when every point lies on or above the chord of its neighbours."""
        u, v = self.fpr, self.tpr
        if u.size < 3:
            return True
        du1, dv1 = u[1:-1] - u[:-2], v[1:-1] - v[:-2]
        du2, dv2 = u[2:] - u[:-2], v[2:] - v[:-2]
        cross = du1 * dv2 - dv1 * du2
        return bool(np.all(cross <= atol))

    def initial_slope(self) -> float:
        """Largest secant ``tpr / fpr``; equals the slope at the origin for concave curves."""
        u, v = self.fpr, self.tpr
        if np.any((u == 0) & (v > 0)):
            return math.inf
        mask = u > 0
        return float(np.max(v[mask] / u[mask]))


@dataclass(frozen=True)
class RocFeasibility:
    feasible: bool
    u_max: float
    witness: Optional[tuple[float, float]]
    concave: bool


def roc_feasible(roc: RocCurve, pi: float, alpha: float, rtol: float = 1e-12) -> RocFeasibility:
    """Scan operating points for one in the half-space ``tpr >= C * fpr`` with positive coverage.

    A point with zero FPR and positive TPR counts as satisfying (infinite
    ratio).  ``u_max`` is the largest satisfying FPR; for a non-concave
    curve the satisfying set need not be an interval, which the
    ``concave`` flag reports.
    """
    c = critical_ratio(pi, alpha)
    u, v = roc.fpr, roc.tpr
    positive = (u > 0) | (v > 0)
    if math.isinf(c):
        ok = (u == 0) & (v > 0) if pi > 0 else np.zeros_like(u, dtype=bool)
    else:
        ok = positive & (v >= c * u * (1.0 - rtol))
    concave = roc.is_concave()
    if not np.any(ok):
        return RocFeasibility(False, 0.0, None, concave)
    idx = np.flatnonzero(ok)
    best = idx[np.lexsort((v[idx], u[idx]))[-1]]
    return RocFeasibility(True, float(u[best]), (float(u[best]), float(v[best])), concave)


def estimate_pi(labels: Iterable[int], delta: float = 0.10) -> tuple[float, float, float]:
    """Safe-rate estimate with one-sided ``1 - delta/2`` Clopper-Pearson limits on each side."""
    y = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels)
    n = int(y.size)
    if n == 0:
        raise InvalidArgumentError("cannot estimate pi from an empty label set")
    k = int(np.sum(y == 1))
    upper = cp_upper_bound(k, n, delta / 2.0)
    lower = 1.0 - cp_upper_bound(n - k, n, delta / 2.0)
    return k / n, lower, upper


@dataclass(frozen=True)
class FeasibilityReport:
    pi: float
    alpha: float
    critical_ratio: float
    critical_auc: float
    tight_auc: float
    feasible: bool
    basis: str
    auc: Optional[float] = None
    coverage_bound: Optional[float] = None
    u_max: Optional[float] = None
    initial_slope: Optional[float] = None
    concave: Optional[bool] = None
    pi_interval: Optional[tuple[float, float]] = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def feasibility_report(
    pi: float,
    alpha: float,
    auc: Optional[float] = None,
    roc: Optional[RocCurve] = None,
    pi_interval: Optional[tuple[float, float]] = None,
) -> FeasibilityReport:
    """Collect every feasibility diagnostic available from the inputs.

    The verdict uses the strongest evidence supplied: the ROC scan is exact;
    otherwise ``C <= 1`` is feasible outright and ``auc >= critical_auc``
    is sufficient.  Without an ROC, a ``False`` verdict means "not
    certified", not "infeasible".
    """
    c = critical_ratio(pi, alpha)
    phi_c = critical_auc(pi, alpha)
    phi_star = tight_auc(pi, alpha)
    if roc is not None and auc is None:
        auc = roc.auc
    cov = None
    if auc is not None and 1.0 < c < math.inf and auc >= phi_star:
        cov = coverage_lower_bound(pi, alpha, auc)

    u_max = slope = concave = None
    if roc is not None:
        scan = roc_feasible(roc, pi, alpha)
        feasible, basis = scan.feasible, "roc_scan"
        u_max, concave = scan.u_max, scan.concave
        slope = roc.initial_slope()
    elif c <= 1.0 and pi > 0:
        feasible, basis = True, "critical_ratio"
    elif auc is not None:
        feasible, basis = auc >= phi_c and pi > 0, "critical_auc"
    else:
        feasible, basis = False, "insufficient"
    return FeasibilityReport(
        pi=pi,
        alpha=alpha,
        critical_ratio=c,
        critical_auc=phi_c,
        tight_auc=phi_star,
        feasible=bool(feasible),
        basis=basis,
        auc=auc,
        coverage_bound=cov,
        u_max=u_max,
        initial_slope=slope,
        concave=concave,
        pi_interval=pi_interval,
    )


def feasibility_grid(pi_grid: Sequence[float], alpha_grid: Sequence[float]) -> np.ndarray:
    """Critical AUC over a (pi, alpha) grid; rows follow ``pi_grid``."""
    if len(pi_grid) == 0 or len(alpha_grid) == 0:
        raise InvalidArgumentError("feasibility grids must be non-empty")
    return np.array([[critical_auc(p, a) for a in alpha_grid] for p in pi_grid], dtype=float)


def write_feasibility_grid(out: TextIO, pi_grid: Sequence[float], alpha_grid: Sequence[float]) -> int:
    """Write ``pi, alpha, phi_c, phi_c_star`` rows (row-major over pi); returns the row count."""
    phi = feasibility_grid(pi_grid, alpha_grid)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GRID_HEADER)
    rows = 0
    for i, p in enumerate(pi_grid):
        for j, a in enumerate(alpha_grid):
            writer.writerow([f"{p:.6f}", f"{a:.6f}", f"{phi[i, j]:.6f}", f"{tight_auc(p, a):.6f}"])
            rows += 1
    return rows
