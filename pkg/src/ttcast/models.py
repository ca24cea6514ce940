"""Forecasters for the smoothed daily TT difference.

Three kinds share one TrainedModel container:

* naive  -- random walk: predicted delta is always 0.
* ar_diff -- OLS AR(p) with intercept on raw first differences, p chosen by
  AIC on a common sample; forecasts the next (unsmoothed) diff.
* gbt    -- in-repo gradient-boosted regression trees on standardized
  targets with exact greedy variance-reduction splits.

All randomness comes from PCG64 generators seeded by (seed, round), so a
fit is bitwise reproducible on any platform and at any thread count.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureMatrix
from .io_utils import atomic_write

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12
MODEL_SCHEMA = "ttcast-model-v1"

KIND_NAIVE = "naive"
KIND_AR = "ar_diff"
KIND_GBT = "gbt"


@dataclass(frozen=True, slots=True)
class TargetStandardizer:
    """Affine map fit on training targets only; std floored at 1e-12."""

    mean: float
    std: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "TargetStandardizer":
        y = np.asarray(y, dtype=np.float64)
        return cls(mean=float(np.mean(y)), std=max(float(np.std(y)), STD_FLOOR))

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True, slots=True)
class GBTParams:
    n_estimators: int = 1000
    learning_rate: float = 0.1
    max_depth: int = 5
    feature_fraction: float = 0.9
    bagging_fraction: float = 0.9
    min_samples_leaf: int = 5
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ValueError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        for name in ("feature_fraction", "bagging_fraction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")

    def as_dict(self, include_seed: bool = True) -> dict:
        out = asdict(self)
        if not include_seed:
            out.pop("seed")
        return out


@dataclass(frozen=True, slots=True)
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64 (NaN at leaves)
    left: np.ndarray  # int32 (-1 at leaves)
    right: np.ndarray  # int32
    value: np.ndarray  # float64 (leaf prediction)

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        cur = np.zeros(n, dtype=np.int64)
        # route until every row sits on a leaf; node count bounds the depth
        for _ in range(len(self.feature)):
            feat = self.feature[cur]
            internal = feat >= 0
            if not internal.any():
                break
            fx = X[np.arange(n), np.where(internal, feat, 0)]
            nxt = np.where(fx <= self.threshold[cur], self.left[cur], self.right[cur])
            cur = np.where(internal, nxt, cur)
        return self.value[cur]


@dataclass
class TrainedModel:
    kind: str
    feature_names: tuple[str, ...] = ()
    standardizer: TargetStandardizer | None = None
    params: GBTParams | None = None
    base_score: float = 0.0
    trees: tuple[Tree, ...] = ()
    ar_p: int = 0
    ar_coefficients: tuple[float, ...] = ()  # intercept first, then lag weights
    _forest: "_FlatForest | None" = field(default=None, repr=False, compare=False)

    def forest(self) -> "_FlatForest":
        if self._forest is None:
            self._forest = _FlatForest(self.trees)
        return self._forest


class _FlatForest:
    """All trees concatenated for vectorized routing of every row through
    every tree at once."""

    def __init__(self, trees: Sequence[Tree]):
        if not trees:
            self.n_trees = 0
            return
        offsets = np.cumsum([0] + [len(t.feature) for t in trees[:-1]])
        self.n_trees = len(trees)
        self.roots = offsets.astype(np.int64)
        self.feature = np.concatenate([t.feature for t in trees])
        self.threshold = np.concatenate([t.threshold for t in trees])
        self.left = np.concatenate(
            [np.where(t.left >= 0, t.left + off, -1) for t, off in zip(trees, offsets)]
        ).astype(np.int64)
        self.right = np.concatenate(
            [np.where(t.right >= 0, t.right + off, -1) for t, off in zip(trees, offsets)]
        ).astype(np.int64)
        self.value = np.concatenate([t.value for t in trees])

    def sum_values(self, X: np.ndarray) -> np.ndarray:
        """Sum of per-tree leaf values for each row of X."""
        n = X.shape[0]
        if self.n_trees == 0 or n == 0:
            return np.zeros(n)
        cur = np.broadcast_to(self.roots[:, None], (self.n_trees, n)).copy()
        xt = np.ascontiguousarray(X.T)
        cols = np.arange(n)[None, :]
        while True:
            feat = self.feature[cur]
            internal = feat >= 0
            if not internal.any():
                break
            fx = xt[np.where(internal, feat, 0), cols]
            nxt = np.where(fx <= self.threshold[cur], self.left[cur], self.right[cur])
            cur = np.where(internal, nxt, cur)
        return self.value[cur].sum(axis=0)


def fit_naive() -> TrainedModel:
    """Random-walk benchmark: predicted delta 0, so the reconstructed
    forecast is the previous day's TT."""
    return TrainedModel(kind=KIND_NAIVE)


def _solve_gauss(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Partial-pivot Gaussian elimination; None when singular.

    Hand-rolled (systems here are at most 6x6) so the solve never touches
    BLAS and results cannot vary with thread count.
    """
    a = a.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    n = len(b)
    scale = max(float(np.max(np.abs(a))), 1.0)
    tol = 1e-12 * scale
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot_row, col]) < tol:
            return None
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        for row in range(col + 1, n):
            factor = a[row, col] / a[col, col]
            if factor != 0.0:
                a[row, col:] -= factor * a[col, col:]
                b[row] -= factor * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - float(np.sum(a[row, row + 1:] * x[row + 1:]))) / a[row, row]
    return x


def fit_ar_diff(tt: np.ndarray, p_max: int = 5) -> TrainedModel:
    """AR(p) with intercept on first differences, p in {0..p_max} by AIC.

    All candidates are scored on the common sample (rows from index p_max of
    the diff series) so AIC values are comparable; ties prefer the smaller
    p. Candidates with singular normal equations are skipped with a warning
    (p=0, plain drift, can always be fit).
    """
    tt = np.asarray(tt, dtype=np.float64)
    if len(tt) < p_max + 10:
        raise ValueError(
            f"need >= p_max + 10 = {p_max + 10} observations to fit, got {len(tt)}"
        )
    d = tt[1:] - tt[:-1]
    rows = np.arange(p_max, len(d))
    y = d[rows]
    n = len(y)

    best_p = -1
    best_aic = math.inf
    best_beta: np.ndarray | None = None
    skipped: list[int] = []
    for p in range(p_max + 1):
        design = np.column_stack([np.ones(n)] + [d[rows - j] for j in range(1, p + 1)])
        # normal equations built by plain reductions, not BLAS matmul, so the
        # result is bitwise independent of thread count
        k = p + 1
        gram = np.empty((k, k))
        moment = np.empty(k)
        for a_col in range(k):
            moment[a_col] = float(np.sum(design[:, a_col] * y))
            for b_col in range(a_col, k):
                gram[a_col, b_col] = gram[b_col, a_col] = float(
                    np.sum(design[:, a_col] * design[:, b_col])
                )
        beta = _solve_gauss(gram, moment)
        if beta is None:
            skipped.append(p)
            continue
        resid = y - np.sum(design * beta[None, :], axis=1)
        sse = float(np.sum(resid * resid))
        aic = n * math.log(max(sse / n, 1e-300)) + 2 * (p + 1)
        if aic < best_aic:
            best_aic = aic
            best_p = p
            best_beta = beta
    if skipped:
        logger.warning(
            "singular normal equations for p in %s; fell back to best of the rest (p=%d)",
            skipped,
            best_p,
        )
    assert best_beta is not None  # p=0 is always solvable
    return TrainedModel(
        kind=KIND_AR,
        feature_names=tuple(f"TT_diff_lag{j}" for j in range(1, best_p + 1)),
        ar_p=best_p,
        ar_coefficients=tuple(float(v) for v in best_beta),
    )


def forecast_ar_diff(model: TrainedModel, tt: np.ndarray, origins: np.ndarray) -> np.ndarray:
    """One-step diff forecast at each origin position of the TT series.

    Uses diffs at and before the origin only. Every origin must leave room
    for p lagged diffs (origin position >= p).
    """
    if model.kind != KIND_AR:
        raise ValueError(f"expected an {KIND_AR} model, got {model.kind}")
    tt = np.asarray(tt, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    d = tt[1:] - tt[:-1]  # d[i] = tt[i+1] - tt[i]
    p = model.ar_p
    if origins.size and origins.min() < p:
        raise ValueError(f"origin position {int(origins.min())} has fewer than p={p} diffs")
    coefs = np.asarray(model.ar_coefficients)
    out = np.full(len(origins), coefs[0])
    for j in range(1, p + 1):
        # diff lag j relative to the next step: d_{t+1-j} = d[origin - j]
        out += coefs[j] * d[origins - j]
    return out


def _fit_tree(
    X: np.ndarray,
    resid: np.ndarray,
    row_idx: np.ndarray,
    col_idx: np.ndarray,
    max_depth: int,
    min_leaf: int,
) -> Tree:
    """Exact greedy variance-reduction tree on the given row/column subsets.

    Candidate thresholds are midpoints of consecutive distinct sorted
    values; a split is accepted only if SSE strictly decreases and both
    children keep >= min_leaf rows; ties go to the lowest feature index,
    then the lowest threshold.
    """
    Xl = X[np.ix_(row_idx, col_idx)]
    yl = resid[row_idx]
    sort_idx = np.argsort(Xl, axis=0, kind="stable")

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(order: np.ndarray, depth: int) -> int:
        node = new_node()
        m = order.shape[0]
        node_rows = np.sort(order[:, 0])  # canonical order for a stable mean
        node_y = yl[node_rows]
        value[node] = float(np.mean(node_y))
        constant = bool(np.all(node_y == node_y[0]))
        if depth >= max_depth or m < 2 * min_leaf or constant:
            return node

        y_sorted = yl[order]
        x_sorted = np.take_along_axis(Xl, order, axis=0)
        csum = np.cumsum(y_sorted, axis=0)
        total = csum[-1, :]
        sizes = np.arange(1, m, dtype=np.float64)[:, None]
        left_sum = csum[:-1, :]
        gain = (
            left_sum**2 / sizes
            + (total[None, :] - left_sum) ** 2 / (m - sizes)
            - total[None, :] ** 2 / m
        )
        valid = (
            (x_sorted[1:, :] > x_sorted[:-1, :])
            & (sizes >= min_leaf)
            & ((m - sizes) >= min_leaf)
        )
        gain = np.where(valid, gain, -np.inf)
        best_pos = np.argmax(gain, axis=0)  # first max: lowest threshold
        best_gain = gain[best_pos, np.arange(gain.shape[1])]
        j = int(np.argmax(best_gain))  # first max: lowest feature index
        if not best_gain[j] > 0.0:
            return node

        s = int(best_pos[j]) + 1  # left child size
        thr = (x_sorted[s - 1, j] + x_sorted[s, j]) / 2.0
        in_left = np.zeros(Xl.shape[0], dtype=bool)
        in_left[order[:s, j]] = True
        member = in_left[order]
        # compress column-wise (transpose keeps each column's entries
        # contiguous), preserving per-column sorted order in both children
        n_cols = order.shape[1]
        left_order = order.T[member.T].reshape(n_cols, s).T
        right_order = order.T[~member.T].reshape(n_cols, m - s).T

        left_child = build(left_order, depth + 1)
        right_child = build(right_order, depth + 1)
        feature[node] = int(col_idx[j])
        threshold[node] = float(thr)
        left[node] = left_child
        right[node] = right_child
        return node

    build(sort_idx, 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def _round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, round_index))))


def fit_gbt(matrix: FeatureMatrix, params: GBTParams) -> TrainedModel:
    """Squared-loss boosting on the standardized target.

    F0 = mean of standardized targets; round m draws its row and feature
    subsamples (without replacement) from a PCG64 stream seeded by
    (params.seed, m) -- rows first, then features -- fits a depth-limited
    tree to the residuals, and adds learning_rate times the tree.
    """
    X = np.ascontiguousarray(matrix.X, dtype=np.float64)
    y_raw = np.asarray(matrix.y, dtype=np.float64)
    n, n_features = X.shape
    if n < 2 * params.min_samples_leaf:
        raise ValueError(
            f"need >= 2*min_samples_leaf = {2 * params.min_samples_leaf} rows, got {n}"
        )

    standardizer = TargetStandardizer.fit(y_raw)
    z = standardizer.transform(y_raw)
    base_score = float(np.mean(z))

    trees: list[Tree] = []
    if not np.all(y_raw == y_raw[0]):
        resid = z - base_score
        n_rows_draw = max(1, int(math.floor(params.bagging_fraction * n)))
        n_cols_draw = max(1, int(math.floor(params.feature_fraction * n_features)))
        all_rows = np.arange(n)
        all_cols = np.arange(n_features)
        for m in range(1, params.n_estimators + 1):
            rng = _round_rng(params.seed, m)
            if n_rows_draw < n:
                rows = np.sort(rng.choice(n, size=n_rows_draw, replace=False))
            else:
                rows = all_rows
            if n_cols_draw < n_features:
                cols = np.sort(rng.choice(n_features, size=n_cols_draw, replace=False))
            else:
                cols = all_cols
            tree = _fit_tree(X, resid, rows, cols, params.max_depth, params.min_samples_leaf)
            resid -= params.learning_rate * tree.predict(X)
            trees.append(tree)

    return TrainedModel(
        kind=KIND_GBT,
        feature_names=tuple(matrix.feature_names),
        standardizer=standardizer,
        params=params,
        base_score=base_score,
        trees=tuple(trees),
    )


def predict(model: TrainedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Destandardized delta forecast for each matrix row.

    Feature names must match the model's snapshot exactly, order included.
    """
    if model.kind == KIND_NAIVE:
        return np.zeros(matrix.n_rows)
    if model.kind == KIND_GBT:
        if tuple(matrix.feature_names) != tuple(model.feature_names):
            missing = [n for n in model.feature_names if n not in matrix.feature_names]
            extra = [n for n in matrix.feature_names if n not in model.feature_names]
            detail = (
                f"missing={missing[:5]} extra={extra[:5]}"
                if missing or extra
                else "same names, different order"
            )
            raise ValueError(f"feature names do not match the model snapshot: {detail}")
        X = np.ascontiguousarray(matrix.X, dtype=np.float64)
        z = model.base_score + (model.params.learning_rate * model.forest().sum_values(X)
                                if model.trees else np.zeros(matrix.n_rows))
        return model.standardizer.inverse(z)
    raise ValueError(
        f"predict() serves naive/gbt models on feature matrices; "
        f"use forecast_ar_diff for {model.kind}"
    )


def model_to_dict(model: TrainedModel) -> dict:
    trees_doc = []
    for tree in model.trees:
        nodes = []
        for i in range(len(tree.feature)):
            leaf = tree.feature[i] < 0
            nodes.append(
                {
                    "feature": int(tree.feature[i]),
                    "threshold": None if leaf else float(tree.threshold[i]),
                    "left": int(tree.left[i]),
                    "right": int(tree.right[i]),
                    "value": float(tree.value[i]),
                }
            )
        trees_doc.append(nodes)
    return {
        "schema": MODEL_SCHEMA,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "standardizer": (
            None
            if model.standardizer is None
            else {"mean": model.standardizer.mean, "std": model.standardizer.std}
        ),
        "params": None if model.params is None else model.params.as_dict(),
        "base_score": model.base_score,
        "trees": trees_doc,
        "ar": (
            None
            if model.kind != KIND_AR
            else {"p": model.ar_p, "coefficients": list(model.ar_coefficients)}
        ),
    }


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    trees = []
    for nodes in doc["trees"]:
        trees.append(
            Tree(
                feature=np.array([nd["feature"] for nd in nodes], dtype=np.int32),
                threshold=np.array(
                    [math.nan if nd["threshold"] is None else nd["threshold"] for nd in nodes]
                ),
                left=np.array([nd["left"] for nd in nodes], dtype=np.int32),
                right=np.array([nd["right"] for nd in nodes], dtype=np.int32),
                value=np.array([nd["value"] for nd in nodes], dtype=np.float64),
            )
        )
    std_doc = doc.get("standardizer")
    params_doc = doc.get("params")
    ar_doc = doc.get("ar")
    return TrainedModel(
        kind=doc["kind"],
        feature_names=tuple(doc["feature_names"]),
        standardizer=None if std_doc is None else TargetStandardizer(**std_doc),
        params=None if params_doc is None else GBTParams(**params_doc),
        base_score=float(doc["base_score"]),
        trees=tuple(trees),
        ar_p=0 if ar_doc is None else int(ar_doc["p"]),
        ar_coefficients=() if ar_doc is None else tuple(float(c) for c in ar_doc["coefficients"]),
    )


def save_model(model: TrainedModel, path: str | Path) -> None:
    with atomic_write(path) as handle:
        json.dump(model_to_dict(model), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as handle:
        return model_from_dict(json.load(handle))
