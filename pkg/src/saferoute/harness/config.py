"""Experiment configuration as flat ``key = value`` text.

List-valued keys (``tau``, ``alpha``, ``method``, ``seed``, ``split``) are
written once per element; every other key may appear at most once.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

from saferoute.errors import InvalidArgumentError
from saferoute.recalibration import KINDS
from saferoute.synthetic import BinormalSpec

METHODS = ("gate_conformal", "reg_conformal", "naive", "oracle", "random", "always_bb", "always_cm")
RECALIBRATIONS = ("none",) + tuple(k for k in KINDS if k != "identity")
DEFAULT_SPLITS = (0.55, 0.15, 0.15, 0.15)
DEFAULT_TAUS = (-1.5, -1.0, 0.0, 0.5, 1.0, 2.0)
DEFAULT_ALPHAS = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50, 0.60, 0.80)
SEED_ENV = "SAFEROUTE_SEED"
BUNDLED_PREFIX = "bundled:"

_LIST_KEYS = {"tau", "alpha", "method", "seed", "split"}
_SCALAR_KEYS = {
    "data", "name", "delta", "recalibration", "recalibration_mode",
    "binormal.pi", "binormal.auc", "binormal.sigma", "binormal.n",
    "forest.trees", "forest.min_leaf", "forest.max_depth",
    "gate.l2", "ridge.lambda", "ece.bins",
}


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InvalidArgumentError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass
class ExperimentConfig:
    """Everything ``run_pipeline`` needs.

    ``data`` is a CSV path, ``bundled:<name>`` for a packaged dataset, or
    ``binormal`` to draw gate scores from ``binormal`` instead of training
    models.
    """

    data: str = "bundled:synthetic_2000"
    name: Optional[str] = None
    binormal: Optional[BinormalSpec] = None
    binormal_n: int = 5000
    splits: tuple[float, ...] = DEFAULT_SPLITS
    taus: tuple[float, ...] = DEFAULT_TAUS
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    delta: float = 0.10
    methods: tuple[str, ...] = METHODS
    recalibration: str = "platt"
    recalibration_mode: str = "replace"
    seeds: tuple[int, ...] = field(default_factory=lambda: (default_seed(),))
    forest_trees: int = 100
    forest_min_leaf: int = 3
    forest_max_depth: Optional[int] = None
    gate_l2: float = 1.0
    ridge_lambda: float = 1.0
    ece_bins: int = 10

    def __post_init__(self) -> None:
        self.splits = tuple(float(r) for r in self.splits)
        if len(self.splits) != 4 or any(not r > 0 for r in self.splits):
            raise InvalidArgumentError("split needs four positive ratios")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"split ratios must sum to 1, got {sum(self.splits)}")
        if not self.taus or not self.alphas or not self.methods or not self.seeds:
            raise InvalidArgumentError("tau, alpha, method and seed lists must be non-empty")
        for a in (*self.alphas, self.delta):
            if not 0.0 < a < 1.0:
                raise InvalidArgumentError(f"alpha and delta must lie in (0, 1), got {a}")
        if any(not math.isfinite(t) for t in self.taus):
            raise InvalidArgumentError("tau values must be finite")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidArgumentError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidArgumentError("methods must not repeat")
        if self.recalibration not in RECALIBRATIONS:
            raise InvalidArgumentError(f"recalibration must be one of {', '.join(RECALIBRATIONS)}")
        if self.recalibration_mode not in ("replace", "stack"):
            raise InvalidArgumentError("recalibration_mode must be replace or stack")
        if self.data == "binormal" and self.binormal is None:
            raise InvalidArgumentError("binormal data needs binormal.pi and binormal.auc")
        if self.forest_trees < 1 or self.forest_min_leaf < 1 or self.ece_bins < 1 or self.binormal_n < 4:
            raise InvalidArgumentError("forest.trees, forest.min_leaf, ece.bins must be >= 1 and binormal.n >= 4")

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.data == "binormal":
            return "binormal"
        if self.data.startswith(BUNDLED_PREFIX):
            return self.data[len(BUNDLED_PREFIX):]
        return Path(self.data).stem


def _num(key: str, value: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise InvalidArgumentError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def parse_config(lines: Iterable[str], base_dir: Union[str, Path, None] = None) -> ExperimentConfig:
    """Build a config from ``key = value`` lines; relative data paths resolve against ``base_dir``."""
    lists: dict[str, list[str]] = {}
    scalars: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise InvalidArgumentError(f"line {lineno}: expected 'key = value'")
        if key in _LIST_KEYS:
            lists.setdefault(key, []).append(value)
        elif key in _SCALAR_KEYS:
            if key in scalars:
                raise InvalidArgumentError(f"line {lineno}: {key} given twice")
            scalars[key] = value
        else:
            raise InvalidArgumentError(f"line {lineno}: unknown key {key!r}")

    kw: dict = {}
    if "split" in lists:
        kw["splits"] = tuple(_num("split", v) for v in lists["split"])
    if "tau" in lists:
        kw["taus"] = tuple(_num("tau", v) for v in lists["tau"])
    if "alpha" in lists:
        kw["alphas"] = tuple(_num("alpha", v) for v in lists["alpha"])
    if "method" in lists:
        kw["methods"] = tuple(lists["method"])
    if "seed" in lists:
        kw["seeds"] = tuple(_num("seed", v, int) for v in lists["seed"])

    data = scalars.get("data", ExperimentConfig.data)
    if data not in ("binormal",) and not data.startswith(BUNDLED_PREFIX) and base_dir is not None:
        p = Path(data)
        data = str(p if p.is_absolute() else Path(base_dir) / p)
    kw["data"] = data
    if "name" in scalars:
        kw["name"] = scalars["name"]
    if "delta" in scalars:
        kw["delta"] = _num("delta", scalars["delta"])
    for key, attr in (("recalibration", "recalibration"), ("recalibration_mode", "recalibration_mode")):
        if key in scalars:
            kw[attr] = scalars[key]
    for key, attr, kind in (
        ("forest.trees", "forest_trees", int),
        ("forest.min_leaf", "forest_min_leaf", int),
        ("gate.l2", "gate_l2", float),
        ("ridge.lambda", "ridge_lambda", float),
        ("ece.bins", "ece_bins", int),
        ("binormal.n", "binormal_n", int),
    ):
        if key in scalars:
            kw[attr] = _num(key, scalars[key], kind)
    if "forest.max_depth" in scalars and scalars["forest.max_depth"].lower() != "none":
        kw["forest_max_depth"] = _num("forest.max_depth", scalars["forest.max_depth"], int)
    if "binormal.pi" in scalars or "binormal.auc" in scalars:
        if "binormal.pi" not in scalars or "binormal.auc" not in scalars:
            raise InvalidArgumentError("binormal needs both binormal.pi and binormal.auc")
        kw["binormal"] = BinormalSpec.with_auc(
            _num("binormal.pi", scalars["binormal.pi"]),
            _num("binormal.auc", scalars["binormal.auc"]),
            sigma=_num("binormal.sigma", scalars.get("binormal.sigma", "1.0")),
        )
    return ExperimentConfig(**kw)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text.splitlines(), base_dir=path.parent)
