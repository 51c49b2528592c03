"""Report rows and their CSV / aligned-text renderings."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence, TextIO

from saferoute.errors import InvalidArgumentError


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    method: str
    tau: float
    alpha: float
    coverage: float
    violation: Optional[float]
    ece: float
    auc: float
    pi: float
    threshold: float
    exceeded_alpha: bool

    def __post_init__(self) -> None:
        expected = self.violation is not None and self.violation > self.alpha
        # a parsed 6-decimal violation may round onto alpha; trust the flag there
        borderline = self.violation is not None and abs(self.violation - self.alpha) <= 1e-6
        if self.exceeded_alpha != expected and not borderline:
            raise InvalidArgumentError("exceeded_alpha must equal (violation present and > alpha)")


HEADER = tuple(f.name for f in fields(ReportRow))
_FLOAT_FIELDS = ("tau", "alpha", "coverage", "violation", "ece", "auc", "pi", "threshold")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    return str(value)


def format_row(row: ReportRow) -> list[str]:
    return [_fmt(v) for v in astuple(row)]


def emit_report(rows: Iterable[ReportRow], out: TextIO, fmt: str = "csv") -> int:
    """Write ``rows`` as CSV (fixed header, 6-decimal fixed point) or an aligned text table."""
    rows = list(rows)
    cells = [format_row(r) for r in rows]
    if fmt == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(cells)
    elif fmt == "text":
        table = [list(HEADER)] + cells
        widths = [max(len(r[i]) for r in table) for i in range(len(HEADER))]
        for r in table:
            # text columns left-aligned, numbers right-aligned
            parts = [c.ljust(widths[i]) if i < 2 else c.rjust(widths[i]) for i, c in enumerate(r)]
            out.write("  ".join(parts).rstrip() + "\n")
    else:
        raise InvalidArgumentError(f"unknown report format {fmt!r}; use csv or text")
    return len(rows)


def _parse_float(text: str) -> float:
    return float(text)


def read_report(lines: Iterable[str]) -> list[ReportRow]:
    """Parse a CSV report written by ``emit_report``."""
    reader = csv.reader(lines)
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise InvalidArgumentError("empty report") from None
    if header != HEADER:
        raise InvalidArgumentError(f"unexpected report header {header}")
    rows = []
    for cells in reader:
        if not cells:
            continue
        if len(cells) != len(HEADER):
            raise InvalidArgumentError("ragged report row")
        rec = dict(zip(HEADER, cells))
        try:
            kw = {k: (None if k == "violation" and rec[k] == "" else _parse_float(rec[k])) for k in _FLOAT_FIELDS}
        except ValueError as exc:
            raise InvalidArgumentError(f"bad report cell: {exc}") from None
        if rec["exceeded_alpha"] not in ("true", "false"):
            raise InvalidArgumentError("exceeded_alpha must be true or false")
        rows.append(ReportRow(dataset=rec["dataset"], method=rec["method"],
                              exceeded_alpha=rec["exceeded_alpha"] == "true", **kw))
    return rows


def filter_rows(rows: Sequence[ReportRow], method: Optional[str] = None, alpha: Optional[float] = None) -> list[ReportRow]:
    return [r for r in rows
            if (method is None or r.method == method) and (alpha is None or abs(r.alpha - alpha) < 1e-9)]
