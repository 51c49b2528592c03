"""Experiment orchestration: configs, splits, pipeline runs, guarantee checks and reports."""

from saferoute.harness.config import (
    DEFAULT_ALPHAS,
    DEFAULT_SPLITS,
    DEFAULT_TAUS,
    METHODS,
    SEED_ENV,
    ExperimentConfig,
    load_config,
    parse_config,
)
from saferoute.harness.pipeline import load_bundled, run_pipeline
from saferoute.harness.report import HEADER, ReportRow, emit_report, read_report
from saferoute.harness.splits import split_dataset, split_sizes
from saferoute.harness.stats import (
    MCResult,
    SweepResult,
    WilcoxonResult,
    guarantee_sweep,
    mc_guarantee,
    wilcoxon_signed_rank,
)

__all__ = [
    "DEFAULT_ALPHAS", "DEFAULT_SPLITS", "DEFAULT_TAUS", "METHODS", "SEED_ENV",
    "ExperimentConfig", "load_config", "parse_config",
    "load_bundled", "run_pipeline",
    "HEADER", "ReportRow", "emit_report", "read_report",
    "split_dataset", "split_sizes",
    "MCResult", "SweepResult", "WilcoxonResult", "guarantee_sweep", "mc_guarantee", "wilcoxon_signed_rank",
]
