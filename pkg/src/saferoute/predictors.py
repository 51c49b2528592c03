"""Reference / surrogate regressors, degradation labels and dataset ingestion.

The reference model is a bagged forest of CART trees, the surrogate a single
depth-limited tree, and ridge regression backs the regression-conformal
baseline.  Users with their own model pair can skip all of this by
supplying precomputed ``f_pred`` / ``g_pred`` columns (CSV schema B).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from saferoute.errors import InvalidArgumentError, SingularSystemError

__all__ = [
    "PredictionRecord",
    "Dataset",
    "TreeModel",
    "ForestModel",
    "RidgeModel",
    "degradation",
    "safety_label",
    "fit_tree",
    "fit_forest",
    "fit_ridge",
    "select_surrogate_depth",
    "mae",
    "load_csv",
    "write_csv",
    "SURROGATE_DEPTH_GRID",
]

SURROGATE_DEPTH_GRID = (2, 3, 4, 5, 7, 9, 11, 13, 15)


def degradation(y, f_pred, g_pred):
    """Extra absolute error of the surrogate over the reference: ``|y - g| - |y - f|``.

    Works elementwise on arrays; positive values mean the surrogate is worse.
    """
    y, f, g = (np.asarray(v, dtype=float) for v in (y, f_pred, g_pred))
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise InvalidArgumentError("degradation inputs must be finite")
    d = np.abs(y - g) - np.abs(y - f)
    return float(d) if d.ndim == 0 else d


def safety_label(d, tau: float):
    """1 where degradation is within tolerance (``d <= tau``, boundary inclusive)."""
    d = np.asarray(d, dtype=float)
    out = (d <= tau).astype(int)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PredictionRecord:
    features: tuple[float, ...]
    y: float
    f_pred: float
    g_pred: float
    degradation: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "degradation", degradation(self.y, self.f_pred, self.g_pred))

    def safe(self, tau: float) -> int:
        return safety_label(self.degradation, tau)


@dataclass
class Dataset:
    """Feature matrix and target, optionally with precomputed model predictions."""

    X: np.ndarray
    y: np.ndarray
    f_pred: Optional[np.ndarray] = None
    g_pred: Optional[np.ndarray] = None
    feature_names: tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float)
        if self.X.shape[0] != self.y.size:
            raise InvalidArgumentError("X and y differ in length")
        if (self.f_pred is None) != (self.g_pred is None):
            raise InvalidArgumentError("f_pred and g_pred must be given together")
        if self.f_pred is not None:
            self.f_pred = np.asarray(self.f_pred, dtype=float)
            self.g_pred = np.asarray(self.g_pred, dtype=float)
        if not self.feature_names:
            self.feature_names = tuple(f"x{i + 1}" for i in range(self.X.shape[1]))

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def precomputed(self) -> bool:
        return self.f_pred is not None

    def records(self) -> list[PredictionRecord]:
        if not self.precomputed:
            raise InvalidArgumentError("records need f_pred and g_pred")
        return [
            PredictionRecord(tuple(self.X[i]), float(self.y[i]), float(self.f_pred[i]), float(self.g_pred[i]))
            for i in range(len(self))
        ]


def load_csv(path: Union[str, Path], name: Optional[str] = None) -> Dataset:
    """Read schema A (``y, x1..xd``) or schema B (``y, f_pred, g_pred, x1..xd``)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    if not header or header[0] != "y":
        raise InvalidArgumentError(f"{path}: first column must be 'y', got {header[:1]}")
    precomputed = header[1:3] == ["f_pred", "g_pred"]
    first_feature = 3 if precomputed else 1
    if len(header) <= first_feature:
        raise InvalidArgumentError(f"{path}: no feature columns")
    try:
        data = np.array([[float(c) for c in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: non-numeric cell ({exc})") from None
    if data.size == 0:
        raise InvalidArgumentError(f"{path}: no data rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InvalidArgumentError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError(f"{path}: non-finite values")
    return Dataset(
        X=data[:, first_feature:],
        y=data[:, 0],
        f_pred=data[:, 1] if precomputed else None,
        g_pred=data[:, 2] if precomputed else None,
        feature_names=tuple(header[first_feature:]),
        name=name or path.stem,
    )


def write_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    cols = ["y"] + (["f_pred", "g_pred"] if dataset.precomputed else []) + list(dataset.feature_names)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(dataset)):
            row = [dataset.y[i]]
            if dataset.precomputed:
                row += [dataset.f_pred[i], dataset.g_pred[i]]
            row += list(dataset.X[i])
            w.writerow([repr(float(v)) for v in row])


def mae(y, pred) -> float:
    return float(np.mean(np.abs(np.asarray(y, dtype=float) - np.asarray(pred, dtype=float))))


@dataclass(frozen=True)
class TreeModel:
    """Binary regression tree in flat-array form; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: Optional[int]
    depth: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while np.any(active):
            idx = rows[active]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]


def _best_split(Xn: np.ndarray, yn: np.ndarray, features: np.ndarray, min_leaf: int, rng: np.random.Generator):
    n = yn.size
    yc = yn - yn.mean()
    total_sse = float(yc @ yc)
    best_gain = 0.0
    candidates: list[tuple[int, float]] = []
    for j in features:
        order = np.argsort(Xn[:, j], kind="mergesort")
        xs = Xn[order, j]
        ys = yc[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys * ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        sse_left = csq - csum * csum / n_left
        rsum = -csum  # centered targets sum to zero
        sse_right = (total_sse - csq) - rsum * rsum / n_right
        gain = total_sse - sse_left - sse_right
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not np.any(valid):
            continue
        gain = np.where(valid, gain, -np.inf)
        g = float(gain.max())
        if g > best_gain * (1 + 1e-12) + 1e-300:
            best_gain = g
            candidates = []
        if g >= best_gain * (1 - 1e-12) and g > 0:
            for pos in np.flatnonzero(gain >= best_gain * (1 - 1e-12)):
                candidates.append((int(j), 0.5 * (xs[pos] + xs[pos + 1])))
    if best_gain <= 1e-12 * max(total_sse, 1e-300) or not candidates:
        return None
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


def fit_tree(
    X,
    y,
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
    seed: Union[int, np.random.Generator, None] = 0,
    max_features: Optional[int] = None,
) -> TreeModel:
    """Grow a CART regression tree by greedy variance reduction.

    ``max_features`` draws that many candidate features per node (forest
    mode); ``None`` tries them all.  The seed only matters for feature
    sampling and for breaking exact gain ties.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0 or X.shape[0] != y.size:
        raise InvalidArgumentError("fit_tree needs non-empty X and y of equal length")
    if max_depth is not None and max_depth < 0:
        raise InvalidArgumentError("max_depth must be non-negative")
    if min_leaf < 1:
        raise InvalidArgumentError("min_leaf must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = X.shape[1]
    all_features = np.arange(d)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    tree_depth = 0

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(value) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        tree_depth = max(tree_depth, depth)
        if max_depth is not None and depth >= max_depth:
            continue
        if idx.size < 2 * min_leaf or np.ptp(y[idx]) == 0.0:
            continue
        if max_features is None or max_features >= d:
            feats = all_features
        else:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        split = _best_split(X[idx], y[idx], feats, min_leaf, rng)
        if split is None:
            continue
        j, thr = split
        mask = X[idx, j] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return TreeModel(
        feature=np.array(feature, dtype=np.intp),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
        value=np.array(value, dtype=float),
        max_depth=max_depth,
        depth=tree_depth,
    )


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[TreeModel, ...]
    seeds: tuple[int, ...]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)


def fit_forest(
    X,
    y,
    num_trees: int = 100,
    max_depth: Optional[int] = None,
    seed: int = 0,
    min_leaf: int = 1,
    max_features: Union[int, str, None] = "sqrt",
    bootstrap: bool = True,
) -> ForestModel:
    """Bagged CART trees with per-node feature subsampling (``ceil(sqrt(d))`` by default)."""
    if num_trees < 1:
        raise InvalidArgumentError("num_trees must be at least 1")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise InvalidArgumentError("fit_forest needs non-empty data")
    d = X.shape[1]
    if max_features == "sqrt":
        m = math.ceil(math.sqrt(d))
    elif max_features in (None, "all"):
        m = None
    else:
        m = int(max_features)
    children = np.random.SeedSequence(seed).spawn(num_trees)
    seeds = tuple(int(c.generate_state(1)[0]) for c in children)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        if bootstrap:
            idx = rng.integers(0, y.size, size=y.size)
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        trees.append(fit_tree(Xb, yb, max_depth=max_depth, min_leaf=min_leaf, seed=rng, max_features=m))
    return ForestModel(tuple(trees), seeds)


def select_surrogate_depth(
    X_train, y_train, X_valid, y_valid, depth_grid: Sequence[int] = SURROGATE_DEPTH_GRID, seed: int = 0
) -> int:
    """Depth from the grid with the lowest validation MAE; ties go to the shallower tree."""
    if len(depth_grid) == 0:
        raise InvalidArgumentError("depth grid is empty")
    best_depth, best_mae = None, math.inf
    for depth in sorted(depth_grid):
        tree = fit_tree(X_train, y_train, max_depth=depth, seed=seed)
        err = mae(y_valid, tree.predict(X_valid))
        if err < best_mae - 1e-12:
            best_depth, best_mae = depth, err
    return int(best_depth)


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    bias: float
    lam: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.weights.size:
            raise InvalidArgumentError(f"expected {self.weights.size} features, got {X.shape[1]}")
        return X @ self.weights + self.bias


def fit_ridge(X, y, lam: float = 1.0) -> RidgeModel:
    """Minimize ``|y - Xw - b|^2 + lam |w|^2`` with the bias left unpenalized."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0 or X.shape[0] != y.size:
        raise InvalidArgumentError("fit_ridge needs at least one row and matching lengths")
    if not math.isfinite(lam) or lam < 0:
        raise InvalidArgumentError(f"lambda must be non-negative, got {lam}")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    rhs = Xc.T @ (y - y_mean)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystemError("ridge normal equations are singular (set lambda > 0)")
    w = np.linalg.solve(A, rhs)
    return RidgeModel(weights=w, bias=y_mean - float(x_mean @ w), lam=float(lam))
