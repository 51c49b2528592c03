"""Conformal gate routing: certify a score threshold with an exact binomial bound.

Candidate thresholds are the distinct calibration scores, scanned in
ascending order.  The first one whose Clopper-Pearson upper bound on the
routed violation rate is at most ``alpha`` is accepted; if none qualifies
the policy abstains.  Scanning a fixed order and stopping at the first
success is what keeps the ``1 - delta`` guarantee valid without a
multiplicity correction, so the order must not be changed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from saferoute.errors import InvalidArgumentError
from saferoute.exact_binomial import cp_upper_bound

__all__ = [
    "Abstain",
    "ROUTE_NOTHING",
    "Decision",
    "RoutingPolicy",
    "PolicyMetrics",
    "candidate_thresholds",
    "select_threshold",
    "route",
    "route_many",
    "evaluate_routing",
    "evaluate_policy",
    "read_record",
]


class Abstain(enum.Enum):
    """The ``t* = infinity`` policy: nothing is routed to the surrogate."""

    ROUTE_NOTHING = "ABSTAIN"

    def __repr__(self) -> str:
        return "ROUTE_NOTHING"


ROUTE_NOTHING = Abstain.ROUTE_NOTHING


class Decision(str, enum.Enum):
    SURROGATE = "surrogate"
    REFERENCE = "reference"


@dataclass(frozen=True)
class RoutingPolicy:
    threshold: Union[float, Abstain]
    alpha: float
    delta: float
    routed_count: int = 0
    unsafe_count: int = 0
    ucb_at_selection: Optional[float] = None
    candidates_tested: int = 0

    def __post_init__(self) -> None:
        if self.unsafe_count > self.routed_count:
            raise InvalidArgumentError("unsafe_count cannot exceed routed_count")
        if not self.abstains and self.ucb_at_selection is not None and self.ucb_at_selection > self.alpha:
            raise InvalidArgumentError("a finite threshold must certify ucb <= alpha")

    @property
    def abstains(self) -> bool:
        return self.threshold is ROUTE_NOTHING

    def dump(self, out: TextIO) -> None:
        thr = "ABSTAIN" if self.abstains else repr(float(self.threshold))
        ucb = "none" if self.ucb_at_selection is None else repr(self.ucb_at_selection)
        out.write(f"threshold = {thr}\n")
        out.write(f"alpha = {self.alpha!r}\n")
        out.write(f"delta = {self.delta!r}\n")
        out.write(f"n = {self.routed_count}\n")
        out.write(f"k = {self.unsafe_count}\n")
        out.write(f"ucb = {ucb}\n")
        out.write(f"candidates_tested = {self.candidates_tested}\n")

    @classmethod
    def load(cls, lines: Iterable[str]) -> "RoutingPolicy":
        return cls.from_record(read_record(lines))

    @classmethod
    def from_record(cls, kv: dict[str, str]) -> "RoutingPolicy":
        try:
            thr = ROUTE_NOTHING if kv["threshold"] == "ABSTAIN" else float(kv["threshold"])
            ucb = None if kv.get("ucb", "none") == "none" else float(kv["ucb"])
            return cls(
                threshold=thr,
                alpha=float(kv["alpha"]),
                delta=float(kv["delta"]),
                routed_count=int(kv.get("n", 0)),
                unsafe_count=int(kv.get("k", 0)),
                ucb_at_selection=ucb,
                candidates_tested=int(kv.get("candidates_tested", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise InvalidArgumentError(f"bad policy file: {exc}") from None


def read_record(lines: Iterable[str]) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    kv = {}
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgumentError(f"malformed record line: {raw!r}")
        kv[key.strip()] = value.strip()
    return kv


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise InvalidArgumentError("calibration set is empty")
    if s.shape != y.shape:
        raise InvalidArgumentError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    return s, y.astype(int)


def candidate_thresholds(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct scores in ascending order with routed counts ``n_j`` and unsafe counts ``k_j``."""
    s, y = _check_inputs(scores, labels)
    uniq, inverse = np.unique(s, return_inverse=True)
    per_total = np.bincount(inverse, minlength=uniq.size)
    per_unsafe = np.bincount(inverse, weights=(y == 0), minlength=uniq.size).astype(np.int64)
    # counts of s >= t_j are suffix sums
    n = np.cumsum(per_total[::-1])[::-1]
    k = np.cumsum(per_unsafe[::-1])[::-1]
    return uniq, n, k


def select_threshold(scores, labels, alpha: float, delta: float) -> RoutingPolicy:
    """Lowest calibration score whose Clopper-Pearson bound on routed violation is at most ``alpha``.

    Parameters
    ----------
    scores, labels : array-like
        Calibration gate scores and safety labels (1 = safe).
    alpha : float
        Routed-set violation budget.
    delta : float
        The guarantee holds with probability at least ``1 - delta``.

    Returns
    -------
    RoutingPolicy
        Finite threshold with its ``n``, ``k`` and bound, or ``ROUTE_NOTHING``.
    """
    for name, val in (("alpha", alpha), ("delta", delta)):
        if not math.isfinite(val) or not 0.0 < val < 1.0:
            raise InvalidArgumentError(f"{name} must lie in (0, 1), got {val}")
    thresholds, n_routed, k_unsafe = candidate_thresholds(scores, labels)
    # With delta < 1/2 the bound always exceeds k/n, so k/n > alpha fails
    # without evaluating the quantile; the decision is unchanged.
    cheap_reject = delta < 0.5
    for j in range(thresholds.size):
        n_j, k_j = int(n_routed[j]), int(k_unsafe[j])
        if cheap_reject and k_j > alpha * n_j:
            continue
        ucb = cp_upper_bound(k_j, n_j, delta)
        if ucb <= alpha:
            return RoutingPolicy(
                threshold=float(thresholds[j]),
                alpha=alpha,
                delta=delta,
                routed_count=n_j,
                unsafe_count=k_j,
                ucb_at_selection=ucb,
                candidates_tested=j + 1,
            )
    return RoutingPolicy(ROUTE_NOTHING, alpha, delta, candidates_tested=int(thresholds.size))


def route(policy: RoutingPolicy, s: float) -> Decision:
    """Surrogate iff the policy is finite and ``s >= threshold``."""
    if policy.abstains or not s >= policy.threshold:
        return Decision.REFERENCE
    return Decision.SURROGATE


def route_many(policy: RoutingPolicy, scores) -> np.ndarray:
    """Boolean mask of inputs sent to the surrogate."""
    s = np.asarray(scores, dtype=float)
    if policy.abstains:
        return np.zeros(s.shape, dtype=bool)
    return s >= policy.threshold


@dataclass(frozen=True)
class PolicyMetrics:
    coverage: float
    violation: Optional[float]
    routed_count: int
    unsafe_routed: int
    total: int


def evaluate_routing(routed, labels) -> PolicyMetrics:
    """Coverage and routed-set violation of any routing mask; violation is ``None`` when nothing is routed."""
    routed = np.asarray(routed, dtype=bool).ravel()
    y = np.asarray(labels).ravel()
    if routed.shape != y.shape:
        raise InvalidArgumentError("routing mask and labels differ in length")
    total = int(y.size)
    if total == 0:
        raise InvalidArgumentError("test set is empty")
    n = int(routed.sum())
    bad = int(np.sum(routed & (y == 0)))
    return PolicyMetrics(n / total, bad / n if n else None, n, bad, total)


def evaluate_policy(policy: RoutingPolicy, scores, labels) -> PolicyMetrics:
    return evaluate_routing(route_many(policy, scores), labels)
