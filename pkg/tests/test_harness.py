import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import wilcoxon as scipy_wilcoxon

from saferoute.errors import DegenerateError, InvalidArgumentError
from saferoute.harness import (
    ExperimentConfig,
    ReportRow,
    emit_report,
    guarantee_sweep,
    parse_config,
    read_report,
    run_pipeline,
    split_dataset,
    split_sizes,
    wilcoxon_signed_rank,
)
from saferoute.harness.config import DEFAULT_ALPHAS, DEFAULT_SPLITS, DEFAULT_TAUS, METHODS
from saferoute.predictors import Dataset, write_csv
from saferoute.synthetic import BinormalSpec, make_regression_data

# a large test split keeps realized test violation close to the true rate
TEST_HEAVY = (0.1, 0.05, 0.05, 0.8)


# splits

def test_split_sizes_example():
    assert split_sizes(20, DEFAULT_SPLITS) == (11, 3, 3, 3)
    assert split_sizes(2000, DEFAULT_SPLITS) == (1100, 300, 300, 300)
    assert split_sizes(0, DEFAULT_SPLITS) == (0, 0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        split_sizes(10, (0.5, 0.6))


@given(st.integers(0, 500), st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, seed):
    parts = split_dataset(n, DEFAULT_SPLITS, seed)
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(n))
    assert tuple(p.size for p in parts) == split_sizes(n, DEFAULT_SPLITS)
    again = split_dataset(n, DEFAULT_SPLITS, seed)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))


# config

def test_config_defaults():
    c = ExperimentConfig()
    assert c.splits == DEFAULT_SPLITS and c.taus == DEFAULT_TAUS and c.alphas == DEFAULT_ALPHAS
    assert c.delta == 0.10 and c.methods == METHODS and len(DEFAULT_ALPHAS) == 10
    assert c.dataset_name == "synthetic_2000"


def test_config_seed_from_environment(monkeypatch):
    monkeypatch.setenv("SAFEROUTE_SEED", "42")
    assert ExperimentConfig().seeds == (42,)
    monkeypatch.setenv("SAFEROUTE_SEED", "x")
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig()


def test_parse_config(tmp_path):
    text = """
    # comment
    data = rows.csv
    tau = 0.0
    tau = 1.0
    alpha = 0.2
    method = gate_conformal
    method = oracle
    seed = 3
    seed = 4
    delta = 0.05
    recalibration = isotonic
    recalibration_mode = stack
    forest.trees = 5
    forest.max_depth = 4
    """
    c = parse_config(text.splitlines(), base_dir=tmp_path)
    assert c.data == str(tmp_path / "rows.csv") and c.dataset_name == "rows"
    assert c.taus == (0.0, 1.0) and c.alphas == (0.2,) and c.seeds == (3, 4)
    assert c.methods == ("gate_conformal", "oracle") and c.delta == 0.05
    assert (c.recalibration, c.recalibration_mode, c.forest_trees, c.forest_max_depth) == ("isotonic", "stack", 5, 4)
    b = parse_config(["data = binormal", "binormal.pi = 0.8", "binormal.auc = 0.75"])
    assert b.binormal.auc == pytest.approx(0.75)


@pytest.mark.parametrize("lines", [
    ["bogus = 1"],
    ["delta = 0.1", "delta = 0.2"],
    ["alpha = 1.5"],
    ["split = 0.5", "split = 0.5", "split = 0.1", "split = 0.1"],
    ["method = magic"],
    ["tau = nan"],
    ["data = binormal"],
    ["binormal.pi = 0.8"],
    ["seed = 1.5"],
    ["no equals sign"],
    ["recalibration = spline"],
])
def test_parse_config_rejects(lines):
    with pytest.raises(InvalidArgumentError):
        parse_config(lines)


# report

def _row(method="gate_conformal", violation=0.1, alpha=0.2, coverage=0.5, threshold=0.7):
    return ReportRow("d@0", method, 0.0, alpha, coverage, violation, 0.05, 0.8, 0.7, threshold,
                     violation is not None and violation > alpha)


def test_report_row_invariant():
    with pytest.raises(InvalidArgumentError):
        ReportRow("d", "naive", 0.0, 0.2, 0.5, 0.3, 0.0, 0.5, 0.5, 0.5, False)
    with pytest.raises(InvalidArgumentError):
        ReportRow("d", "naive", 0.0, 0.2, 0.0, None, 0.0, 0.5, 0.5, 0.5, True)


def test_empty_report_is_header_only():
    buf = io.StringIO()
    assert emit_report([], buf) == 0
    assert buf.getvalue() == "dataset,method,tau,alpha,coverage,violation,ece,auc,pi,threshold,exceeded_alpha\n"
    assert read_report(buf.getvalue().splitlines()) == []


def test_report_round_trip_and_encodings():
    rows = [_row(), _row("naive", 0.35), _row(violation=None, coverage=0.0, threshold=math.inf),
            _row("random", threshold=math.nan)]
    buf = io.StringIO()
    emit_report(rows, buf)
    text = buf.getvalue()
    assert ",,0.050000" in text and ",inf," in text and ",nan," in text and "true" in text
    back = read_report(text.splitlines())
    assert len(back) == 4
    for a, b in zip(rows, back):
        assert (a.method, a.violation, a.exceeded_alpha, a.coverage) == (b.method, b.violation, b.exceeded_alpha, b.coverage)
    assert math.isnan(back[3].threshold) and back[2].threshold == math.inf
    again = io.StringIO()
    emit_report(back, again)
    assert again.getvalue() == text


def test_text_report_is_aligned():
    buf = io.StringIO()
    emit_report([_row(), _row("always_cm", 0.3)], buf, "text")
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3 and lines[0].startswith("dataset")
    assert len({len(l) for l in lines}) == 1
    with pytest.raises(InvalidArgumentError):
        emit_report([], io.StringIO(), "xml")


def test_read_report_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        read_report([])
    with pytest.raises(InvalidArgumentError):
        read_report(["a,b"])


# guarantee sweep

def test_guarantee_sweep_examples():
    rows = [_row(violation=0.3) for _ in range(8)] + [_row(violation=0.1) for _ in range(58)]
    rows += [_row(violation=None, coverage=0.0) for _ in range(5)]
    res = guarantee_sweep(rows)["gate_conformal"]
    assert (res.exceeded, res.eligible) == (8, 66)
    assert res.fraction == pytest.approx(0.121, abs=5e-4)
    zero = guarantee_sweep([_row(violation=None, coverage=0.0)])["gate_conformal"]
    assert zero.fraction is None
    fine = guarantee_sweep([_row(), _row("naive")])
    assert fine["gate_conformal"].fraction == 0 and fine["naive"].fraction == 0
    assert guarantee_sweep([_row(alpha=0.2), _row(alpha=0.3, violation=0.35)], alpha=0.3)["gate_conformal"].exceeded == 1


# wilcoxon

def test_wilcoxon_examples():
    r = wilcoxon_signed_rank([1.0] * 5)
    assert r.method == "exact" and r.p_two_sided == pytest.approx(2 / 32)
    assert wilcoxon_signed_rank([1.0, -1.0, 2.0, -2.0, 3.0, -3.0]).p_two_sided == 1.0
    with pytest.raises(DegenerateError):
        wilcoxon_signed_rank([0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        wilcoxon_signed_rank([1.0, math.nan])
    with pytest.raises(InvalidArgumentError):
        wilcoxon_signed_rank([1.0, 2.0], method="bootstrap")


def test_wilcoxon_exact_and_normal_agree_at_12():
    rng = np.random.default_rng(0)
    for _ in range(500):
        d = rng.normal(rng.uniform(-1, 1), 1.0, 12)
        ex = wilcoxon_signed_rank(d, "exact").p_two_sided
        no = wilcoxon_signed_rank(d, "normal").p_two_sided
        assert abs(ex - no) <= 0.02


def test_wilcoxon_matches_scipy():
    rng = np.random.default_rng(1)
    for n in (5, 9, 12, 30, 80):
        for _ in range(10):
            d = rng.normal(0.2, 1.0, n)
            ours = wilcoxon_signed_rank(d)
            ref = scipy_wilcoxon(d, method="exact" if n <= 12 else "approx", correction=True)
            assert ours.p_two_sided == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)
            assert min(ours.statistic, n * (n + 1) / 2 - ours.statistic) == pytest.approx(ref.statistic)
    # tied magnitudes and zeros through the normal path
    d = np.round(rng.normal(0.2, 1.0, 60), 1)
    for corr in (True, False):
        ref = scipy_wilcoxon(d, method="approx", correction=corr, zero_method="wilcox")
        assert wilcoxon_signed_rank(d, correction=corr).p_two_sided == pytest.approx(ref.pvalue, rel=1e-9)


# pipeline

@pytest.fixture(scope="module")
def small_tabular(tmp_path_factory):
    X, y = make_regression_data(400, seed=2)
    path = tmp_path_factory.mktemp("data") / "small.csv"
    write_csv(Dataset(X, y), path)
    return ExperimentConfig(data=str(path), taus=(-1e6, 0.0, 1.0), alphas=(0.2, 0.5), seeds=(0,),
                            forest_trees=8)


def test_pipeline_rows_and_invariants(small_tabular):
    rows = run_pipeline(small_tabular)
    assert len(rows) == 3 * 2 * len(METHODS)
    assert [r.method for r in rows[:len(METHODS)]] == list(METHODS)
    for r in rows:
        assert 0 <= r.coverage <= 1
        assert r.exceeded_alpha == (r.violation is not None and r.violation > r.alpha)
        if r.method == "oracle":
            assert r.violation in (0.0, None)
    unsafe_everywhere = [r for r in rows if r.tau == -1e6 and r.method == "gate_conformal"]
    assert all(r.coverage == 0 and r.violation is None and r.threshold == math.inf for r in unsafe_everywhere)


def test_pipeline_is_byte_deterministic(small_tabular):
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        emit_report(run_pipeline(small_tabular), buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_pipeline_accepts_precomputed_predictions(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.random((300, 2))
    y = X[:, 0]
    f = y + 0.05 * rng.normal(size=300)
    g = y + (0.05 + X[:, 1]) * rng.normal(size=300)
    path = tmp_path / "pre.csv"
    write_csv(Dataset(X, y, f, g), path)
    rows = run_pipeline(ExperimentConfig(data=str(path), taus=(0.1,), alphas=(0.3,), seeds=(1,)))
    oracle = next(r for r in rows if r.method == "oracle")
    assert oracle.threshold == 0.1 and oracle.violation == 0.0


def test_binormal_gate_keeps_violation_within_alpha():
    cfg = ExperimentConfig(data="binormal", binormal=BinormalSpec.with_auc(0.8, 0.75), binormal_n=20_000,
                           splits=TEST_HEAVY, alphas=(0.2,), seeds=tuple(range(50)), methods=("gate_conformal",))
    rows = run_pipeline(cfg)
    ok = sum(r.violation is None or r.violation <= 0.2 for r in rows)
    assert ok / len(rows) >= 0.9


def test_binormal_dominance_over_naive():
    cfg = ExperimentConfig(data="binormal", binormal=BinormalSpec.with_auc(0.75, 0.75), binormal_n=20_000,
                           splits=TEST_HEAVY, alphas=(0.2,), seeds=tuple(range(20)),
                           methods=("gate_conformal", "naive", "oracle"))
    rows = run_pipeline(cfg)
    sweep = guarantee_sweep(rows)
    slack = 3 * math.sqrt(0.1 * 0.9 / 20)
    assert sweep["gate_conformal"].fraction <= 0.1 + slack
    assert sweep["naive"].fraction > 0.5
    assert all(r.violation == 0.0 for r in rows if r.method == "oracle")
