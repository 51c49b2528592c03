"""Exception types shared across the package.

Two families matter to callers: bad input (``InvalidArgumentError``) and
statistics that cannot be computed from the data at hand
(``DegenerateError``).  The CLI maps them to exit codes 2 and 3.
"""


class RoutingError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RoutingError, ValueError):
    """An argument is out of range, non-finite, or has the wrong shape."""


class DomainError(InvalidArgumentError):
    """A formula is evaluated outside the region where it is defined."""


class DegenerateError(RoutingError):
    """The data do not support the requested statistic (e.g. one class only)."""


class SingularSystemError(DegenerateError):
    """A linear system has no unique solution."""
