"""Command-line interface.

Exit status is 0 on success, 2 for invalid input and 3 when a statistic
is degenerate (for example a single-class sample).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence, TextIO

import numpy as np

from saferoute.conformal import RoutingPolicy, evaluate_policy, read_record, route_many, select_threshold
from saferoute.errors import DegenerateError, InvalidArgumentError
from saferoute.feasibility import estimate_pi, feasibility_report, write_feasibility_grid
from saferoute.harness.config import METHODS, RECALIBRATIONS, default_seed, load_config
from saferoute.harness.pipeline import run_pipeline
from saferoute.harness.report import emit_report
from saferoute.harness.stats import mc_guarantee
from saferoute.recalibration import apply_chain, chain_from_record, chain_to_record, fit_chain
from saferoute.synthetic import BinormalSpec, generate

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 2, 3


@contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _read_columns(path: str, need_labels: bool) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Scores (column ``s``) and optional labels (column ``Y``) from a CSV file."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    if "s" not in rows[0] or (need_labels and "Y" not in rows[0]):
        raise InvalidArgumentError(f"{path}: expected columns s{',Y' if need_labels else ''}")
    try:
        s = np.array([float(r["s"]) for r in rows])
        y = np.array([int(r["Y"]) for r in rows]) if need_labels else None
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{path}: bad value ({exc})") from None
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError(f"{path}: scores must be finite")
    return s, y


def _write_record(out: TextIO, rec: dict) -> None:
    for k, v in rec.items():
        out.write(f"{k} = {v}\n")


def _fmt(v) -> str:
    if v is None:
        return "absent"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def cmd_feasibility(args) -> int:
    with _output(args.output) as out:
        if args.grid:
            pis = np.round(np.arange(args.grid_step, 1.0, args.grid_step), 10)
            alphas = args.alpha_grid or [0.05, 0.10, 0.20, 0.30, 0.50]
            write_feasibility_grid(out, pis, alphas)
            return EXIT_OK
        if args.pi is None or args.alpha is None:
            raise InvalidArgumentError("feasibility needs --pi and --alpha (or --grid)")
        report = feasibility_report(args.pi, args.alpha, auc=args.auc)
        for k, v in report.as_dict().items():
            out.write(f"{k} = {_fmt(v)}\n")
    return EXIT_OK


def _spec_from_args(args) -> BinormalSpec:
    if args.mu1 is not None:
        return BinormalSpec(args.pi, args.mu0, args.mu1, args.sigma, args.seed)
    return BinormalSpec.with_auc(args.pi, args.auc, args.sigma, args.seed)


def cmd_simulate(args) -> int:
    sample = generate(_spec_from_args(args), args.n)
    with _output(args.output) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["s", "Y"])
        for s, y in zip(sample.scores, sample.labels):
            w.writerow([repr(float(s)), int(y)])
    return EXIT_OK


def _load_policy(path: str) -> tuple[RoutingPolicy, list]:
    try:
        rec = read_record(Path(path).read_text().splitlines())
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read policy {path}: {exc.strerror}") from None
    return RoutingPolicy.from_record(rec), chain_from_record(rec)


def cmd_calibrate(args) -> int:
    s, y = _read_columns(args.input, need_labels=True)
    maps = []
    if args.recalibrate != "none":
        if not args.recal_input:
            raise InvalidArgumentError("--recalibrate needs --recal-input (a held-out s,Y file)")
        s_fit, y_fit = _read_columns(args.recal_input, need_labels=True)
        maps = fit_chain(args.recalibrate, s_fit, y_fit, args.recalibrate_mode)
    policy = select_threshold(apply_chain(maps, s), y, args.alpha, args.delta)
    with _output(args.output) as out:
        policy.dump(out)
        if maps:
            _write_record(out, chain_to_record(maps))
    return EXIT_OK


def cmd_route(args) -> int:
    policy, maps = _load_policy(args.policy)
    s, _ = _read_columns(args.input, need_labels=False)
    routed = route_many(policy, apply_chain(maps, s))
    with _output(args.output) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["s", "decision"])
        for si, r in zip(s, routed):
            w.writerow([repr(float(si)), "surrogate" if r else "reference"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    policy, maps = _load_policy(args.policy)
    s, y = _read_columns(args.input, need_labels=True)
    m = evaluate_policy(policy, apply_chain(maps, s), y)
    with _output(args.output) as out:
        out.write(f"coverage = {m.coverage!r}\n")
        out.write(f"violation = {'absent' if m.violation is None else repr(m.violation)}\n")
        out.write(f"routed_count = {m.routed_count}\n")
        out.write(f"unsafe_routed = {m.unsafe_routed}\n")
        out.write(f"total = {m.total}\n")
        if args.report_pi:
            pi, lo, hi = estimate_pi(y, policy.delta)
            out.write(f"pi = {pi!r}\npi_interval = {lo!r},{hi!r}\n")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seeds = (args.seed,)
    if args.method:
        config.methods = tuple(args.method)
    if args.recalibrate is not None:
        config.recalibration = args.recalibrate
    if args.recalibrate_mode is not None:
        config.recalibration_mode = args.recalibrate_mode
    config.__post_init__()
    rows = run_pipeline(config)
    with _output(args.output) as out:
        emit_report(rows, out, args.format)
    return EXIT_OK


def cmd_mc_guarantee(args) -> int:
    spec = _spec_from_args(args)
    res = mc_guarantee(spec, args.n, args.alpha, args.delta, args.trials, seed=args.seed)
    with _output(args.output) as out:
        out.write(f"trials = {res.trials}\n")
        out.write(f"exceeded = {res.exceeded}\n")
        out.write(f"abstained = {res.abstained}\n")
        out.write(f"exceedance = {res.fraction!r}\n")
        out.write(f"bound = {res.delta + res.slack!r}\n")
        out.write(f"within_bound = {'true' if res.fraction <= res.delta + res.slack else 'false'}\n")
    return EXIT_OK


def _add_binormal(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pi", type=float, required=True, help="safe-class prior")
    p.add_argument("--auc", type=float, default=0.75, help="binormal AUC (ignored if --mu1 is given)")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--mu1", type=float, default=None)
    p.add_argument("--sigma", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saferoute", description="Risk-controlled surrogate routing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = default_seed()

    p = sub.add_parser("feasibility", help="feasibility constants for (pi, alpha[, auc])")
    p.add_argument("--pi", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--auc", type=float)
    p.add_argument("--grid", action="store_true", help="emit a (pi, alpha) grid of critical AUCs as CSV")
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--alpha-grid", type=float, nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("simulate", help="draw binormal (s, Y) pairs")
    _add_binormal(p)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="select a threshold from calibration (s, Y)")
    p.add_argument("input")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--recalibrate", choices=RECALIBRATIONS, default="none")
    p.add_argument("--recalibrate-mode", choices=("replace", "stack"), default="replace")
    p.add_argument("--recal-input", help="held-out (s, Y) file used to fit the recalibration map")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("route", help="apply a policy to scores")
    p.add_argument("policy")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("evaluate", help="coverage and violation of a policy on labelled scores")
    p.add_argument("policy")
    p.add_argument("input")
    p.add_argument("--report-pi", action="store_true", help="also print the safe rate and its interval")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a full experiment config")
    p.add_argument("config")
    p.add_argument("--format", choices=("csv", "text"), default="csv")
    p.add_argument("--method", choices=METHODS, action="append")
    p.add_argument("--recalibrate", choices=RECALIBRATIONS)
    p.add_argument("--recalibrate-mode", choices=("replace", "stack"))
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("mc-guarantee", help="Monte Carlo check of Pr(V(t*) > alpha) <= delta")
    _add_binormal(p)
    p.add_argument("-n", type=int, default=300, help="calibration size")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_mc_guarantee)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
    except InvalidArgumentError as exc:
        print(f"saferoute: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DegenerateError as exc:
        print(f"saferoute: degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvalidArgumentError as exc:
        print(f"saferoute: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"saferoute: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
