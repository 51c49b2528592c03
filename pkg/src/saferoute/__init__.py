"""Risk-controlled routing between a reference model and a cheaper surrogate."""

from saferoute.conformal import ROUTE_NOTHING, Decision, RoutingPolicy, route, route_many, select_threshold
from saferoute.exact_binomial import cp_upper_bound, min_calibration_size
from saferoute.feasibility import critical_auc, critical_ratio, feasibility_report, tight_auc

__version__ = "0.1.0"

__all__ = [
    "ROUTE_NOTHING",
    "Decision",
    "RoutingPolicy",
    "route",
    "route_many",
    "select_threshold",
    "cp_upper_bound",
    "min_calibration_size",
    "critical_ratio",
    "critical_auc",
    "tight_auc",
    "feasibility_report",
]
