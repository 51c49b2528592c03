"""End-to-end protocol: models, safety labels, gate, recalibration, policy, evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from saferoute import baselines
from saferoute.conformal import evaluate_routing, route_many, select_threshold
from saferoute.errors import DegenerateError, InvalidArgumentError
from saferoute.gate import GateConfig, auc, constant_gate, ece, train_gate
from saferoute.harness.config import BUNDLED_PREFIX, ExperimentConfig
from saferoute.harness.report import ReportRow
from saferoute.harness.splits import split_dataset
from saferoute.predictors import (
    Dataset,
    degradation,
    fit_forest,
    fit_ridge,
    fit_tree,
    load_csv,
    safety_label,
    select_surrogate_depth,
)
from saferoute.recalibration import apply_chain, fit_chain
from saferoute.synthetic import generate

log = logging.getLogger(__name__)


def load_bundled(name: str) -> Dataset:
    ref = resources.files("saferoute") / "data" / f"{name}.csv"
    if not ref.is_file():
        raise InvalidArgumentError(f"no bundled dataset named {name!r}")
    with resources.as_file(ref) as path:
        return load_csv(path, name=name)


def load_source(config: ExperimentConfig) -> Optional[Dataset]:
    """The tabular dataset, or ``None`` for a binormal score source."""
    if config.data == "binormal":
        return None
    if config.data.startswith(BUNDLED_PREFIX):
        return load_bundled(config.data[len(BUNDLED_PREFIX):])
    return load_csv(config.data, name=config.dataset_name)


@dataclass
class _Split:
    train: np.ndarray
    valid: np.ndarray
    calib: np.ndarray
    test: np.ndarray


def _model_predictions(ds: Dataset, sp: _Split, config: ExperimentConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if ds.precomputed:
        return ds.f_pred, ds.g_pred
    X, y = ds.X, ds.y
    forest = fit_forest(X[sp.train], y[sp.train], num_trees=config.forest_trees,
                        max_depth=config.forest_max_depth, min_leaf=config.forest_min_leaf, seed=seed)
    depth = select_surrogate_depth(X[sp.train], y[sp.train], X[sp.valid], y[sp.valid], seed=seed)
    tree = fit_tree(X[sp.train], y[sp.train], max_depth=depth, seed=seed)
    log.info("seed %d: surrogate depth %d", seed, depth)
    return forest.predict(X), tree.predict(X)


def _gate_scores(X: np.ndarray, Y: np.ndarray, sp: _Split, config: ExperimentConfig):
    ytr = Y[sp.train]
    try:
        gate = train_gate(X[sp.train], ytr, GateConfig(l2_strength=config.gate_l2))
    except DegenerateError:
        gate = constant_gate(X.shape[1], float(ytr.mean()))
    maps = []
    if config.recalibration != "none":
        try:
            maps = fit_chain(config.recalibration, gate.predict(X[sp.valid]), Y[sp.valid],
                             config.recalibration_mode)
        except DegenerateError:
            log.info("recalibration skipped: validation split has a single class")
    return apply_chain(maps, gate.predict(X[sp.calib])), apply_chain(maps, gate.predict(X[sp.test]))


def _metric_or_nan(fn, s, y) -> float:
    try:
        return fn(s, y)
    except DegenerateError:
        return math.nan


def _rows_for_tau(name, tau, config, seed, tau_index, s_cal, y_cal, s_te, y_te, *, d_te=None,
                  reg_policy_fn=None, X_te=None) -> list[ReportRow]:
    pi = float(y_cal.mean())
    gate_auc = _metric_or_nan(auc, s_te, y_te)
    gate_ece = ece(s_te, y_te, config.ece_bins)
    n_te = y_te.size
    rows = []
    for alpha_index, alpha in enumerate(config.alphas):
        policy = select_threshold(s_cal, y_cal, alpha, config.delta)
        gate_routed = route_many(policy, s_te)
        gate_cov = float(gate_routed.mean())
        for method in config.methods:
            if method == "gate_conformal":
                routed = gate_routed
                thr = math.inf if policy.abstains else float(policy.threshold)
            elif method == "reg_conformal":
                if reg_policy_fn is None:
                    routed, thr = np.zeros(n_te, dtype=bool), math.inf
                else:
                    reg = reg_policy_fn(alpha, tau)
                    routed, thr = baselines.regression_route_many(reg, X_te), reg.q_hat
            elif method == "naive":
                routed, thr = baselines.naive_route_many(s_te), baselines.NAIVE_THRESHOLD
            elif method == "oracle":
                if d_te is None:
                    routed, thr = y_te == 1, math.nan
                else:
                    routed, thr = baselines.oracle_route_many(d_te, tau), float(tau)
            elif method == "random":
                rseed = int(np.random.SeedSequence([seed, tau_index, alpha_index]).generate_state(1)[0])
                routed, thr = baselines.random_matched_route(gate_cov, rseed, n_te), math.nan
            elif method == "always_bb":
                routed, thr = baselines.always_route("reference", n_te), math.nan
            else:
                routed, thr = baselines.always_route("surrogate", n_te), math.nan
            m = evaluate_routing(routed, y_te)
            rows.append(ReportRow(
                dataset=f"{name}@{seed}", method=method, tau=float(tau), alpha=float(alpha),
                coverage=m.coverage, violation=m.violation, ece=gate_ece, auc=gate_auc, pi=pi,
                threshold=float(thr),
                exceeded_alpha=m.violation is not None and m.violation > alpha,
            ))
    return rows


def _run_tabular(ds: Dataset, config: ExperimentConfig, seed: int) -> list[ReportRow]:
    sp = _Split(*split_dataset(len(ds), config.splits, seed))
    if min(len(sp.train), len(sp.calib), len(sp.test)) == 0:
        raise InvalidArgumentError(f"dataset of {len(ds)} rows is too small for the requested splits")
    f_pred, g_pred = _model_predictions(ds, sp, config, seed)
    d = degradation(ds.y, f_pred, g_pred)
    ridge = fit_ridge(ds.X[sp.train], d[sp.train], lam=config.ridge_lambda)
    X_cal, d_cal = ds.X[sp.calib], d[sp.calib]

    def reg_policy(alpha, tau):
        return baselines.fit_regression_conformal(X_cal, d_cal, ridge, alpha, tau)

    rows = []
    for ti, tau in enumerate(config.taus):
        Y = safety_label(d, tau)
        s_cal, s_te = _gate_scores(ds.X, Y, sp, config)
        rows += _rows_for_tau(config.dataset_name, tau, config, seed, ti, s_cal, Y[sp.calib], s_te, Y[sp.test],
                              d_te=d[sp.test], reg_policy_fn=reg_policy, X_te=ds.X[sp.test])
    return rows


def _run_binormal(config: ExperimentConfig, seed: int) -> list[ReportRow]:
    sample = generate(config.binormal, config.binormal_n, np.random.default_rng(seed))
    sp = _Split(*split_dataset(len(sample), config.splits, seed))
    # the gate is a logistic model of the latent, which is the Bayes-optimal form here
    X = sample.latent[:, None]
    Y = sample.labels
    s_cal, s_te = _gate_scores(X, Y, sp, config)
    return _rows_for_tau(config.dataset_name, math.nan, config, seed, 0, s_cal, Y[sp.calib], s_te, Y[sp.test])


def run_pipeline(config: ExperimentConfig) -> list[ReportRow]:
    """One row per (seed, tau, alpha, method), ordered by that nesting.

    Every (tau, alpha) pair is calibrated independently on the same
    calibration split, so guarantees hold per pair, not jointly.  A
    binormal source has no degradation, so tau is reported as NaN and the
    regression baseline abstains.
    """
    ds = load_source(config)
    rows: list[ReportRow] = []
    for seed in config.seeds:
        rows += _run_binormal(config, seed) if ds is None else _run_tabular(ds, config, seed)
    return rows
