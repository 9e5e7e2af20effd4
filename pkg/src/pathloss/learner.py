"""Deterministic gradient-boosted regression trees (squared loss).

Splits are exact: every distinct threshold of every feature is scored. Each
feature keeps a presorted index row, and tree nodes own contiguous segments of
those rows, so a whole tree level is searched with a handful of vectorised
array operations. Rows are put in a canonical order before fitting, which
makes the model independent of the input row order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CorruptModel, DimensionMismatch, NonFiniteFeature, TooFewSamples, VersionMismatch

FORMAT_VERSION = 1
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_samples_leaf >= 1 are required")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        for _ in range(self.n_nodes):
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class GbdtModel:
    base_prediction: float
    trees: List[Tree]
    feature_names: List[str]
    config: TrainConfig
    train_mse: List[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def _check_X(X, n_features: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch("feature matrix must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("features contain NaN or infinite values")
    return X


def _partition(P, V, row_key):
    """Stable regrouping of every feature row by the segment key of each data row.

    Keys are small integers ordered like the segments they label, so the
    stable sort is a radix sort and keeps the presorted order inside segments.
    """
    order = np.argsort(row_key[P], axis=1, kind="stable")
    return np.take_along_axis(P, order, axis=1), np.take_along_axis(V, order, axis=1)


def _build_tree(P, V, X, r, cfg: TrainConfig) -> Tree:
    """Grow one level-wise tree on the rows referenced by ``P``."""
    F, n = P.shape
    min_leaf = cfg.min_samples_leaf
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    # segments of the current level: (node id, start, length)
    segs = [(0, 0, n)]
    finished = []
    for _depth in range(cfg.max_depth):
        if not segs:
            break
        R = r[P]
        C = np.cumsum(R, axis=1)
        nxt, splits = [], []
        for node, s, m in segs:
            if m < 2 * min_leaf:
                finished.append((node, s, m))
                continue
            total = C[0, s + m - 1] - (C[0, s - 1] if s else 0.0)
            # candidate split after local position p: left has p + 1 rows
            p = np.arange(min_leaf - 1, m - min_leaf)
            base = C[:, s - 1][:, None] if s else 0.0
            sl = C[:, s + p] - base
            nl = p + 1.0
            nr = m - nl
            gain = sl * sl / nl + (total - sl) ** 2 / nr - total * total / m
            distinct = V[:, s + p] < V[:, s + p + 1]
            gain = np.where(distinct, gain, -np.inf)
            k = int(np.argmax(gain))
            f, j = divmod(k, gain.shape[1])
            if not gain[f, j] > _MIN_GAIN * max(1.0, total * total / m):
                finished.append((node, s, m))
                continue
            a, b = V[f, s + p[j]], V[f, s + p[j] + 1]
            thr = 0.5 * (a + b)
            if not a <= thr < b:
                thr = a
            splits.append((node, s, m, f, thr, int(p[j]) + 1))
        if not splits:
            segs = []
            break
        split_at = {node: (f, thr, nl) for node, _s, _m, f, thr, nl in splits}
        for node, s, m, f, thr, nl in splits:
            feature[node], threshold[node] = f, thr
            lid = len(feature)
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            value += [0.0, 0.0]
            left[node], right[node] = lid, lid + 1
            nxt += [(lid, s, nl), (lid + 1, s + nl, m - nl)]
        # label every data row with the rank of its new segment
        row_key = np.zeros(len(X), dtype=np.int16 if 2 * len(feature) < 2**15 else np.int32)
        layout = sorted(finished + [(node, s, m) for node, s, m, *_ in splits], key=lambda t: t[1])
        key = 0
        for node, s, m in layout:
            if node in split_at:
                f, _thr, nl = split_at[node]
                row_key[P[f, s : s + nl]] = key
                row_key[P[f, s + nl : s + m]] = key + 1
                key += 2
            else:
                row_key[P[0, s : s + m]] = key
                key += 1
        P, V = _partition(P, V, row_key)
        segs = nxt
    finished += segs
    for node, s, m in finished:
        value[node] = float(r[P[0, s : s + m]].mean())
    return Tree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(value, dtype=float),
    )


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting by (features..., target); independent of input order."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def fit(X, y, config: TrainConfig = TrainConfig(), feature_names: Optional[Sequence[str]] = None) -> GbdtModel:
    X = _check_X(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X):
        raise DimensionMismatch("X and y differ in length")
    if not np.all(np.isfinite(y)):
        raise NonFiniteFeature("target contains NaN or infinite values")
    if len(y) < 2 * config.min_samples_leaf:
        raise TooFewSamples(f"{len(y)} samples < 2 * min_samples_leaf ({config.min_samples_leaf})")
    order = canonical_order(X, y)
    X, y = X[order], y[order]
    n, F = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(F)]
    if len(names) != F:
        raise DimensionMismatch("feature_names length differs from the feature count")

    P_full = np.argsort(X, axis=0, kind="stable").T.copy()
    V_full = np.take_along_axis(X.T, P_full, axis=1)
    base = float(np.mean(y))
    pred = np.full(n, base)
    rng = np.random.default_rng(config.seed)
    trees, mse = [], [float(np.mean((y - pred) ** 2))]
    n_sub = max(int(round(config.subsample * n)), 2 * config.min_samples_leaf)
    for _ in range(config.n_trees):
        r = y - pred
        if n_sub < n:
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, n_sub, replace=False)] = True
            keep = mask[P_full]
            P = P_full[keep].reshape(F, n_sub)
            V = V_full[keep].reshape(F, n_sub)
        else:
            P, V = P_full, V_full
        tree = _build_tree(P, V, X, r, config)
        trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(X)
        mse.append(float(np.mean((y - pred) ** 2)))
    return GbdtModel(base, trees, names, config, mse)


def predict(model: GbdtModel, X) -> np.ndarray:
    X = _check_X(X, model.n_features)
    out = np.full(len(X), model.base_prediction)
    for t in model.trees:
        out += model.config.learning_rate * t.predict(X)
    return out


def serialize(model: GbdtModel) -> str:
    """Versioned text format; floats use ``repr`` so the round trip is exact."""
    c = model.config
    buf = io.StringIO()
    buf.write(f"MODEL v{FORMAT_VERSION}\n")
    buf.write(f"features {' '.join(model.feature_names)}\n")
    buf.write(
        f"config n_trees={c.n_trees} max_depth={c.max_depth} learning_rate={c.learning_rate!r} "
        f"min_samples_leaf={c.min_samples_leaf} subsample={c.subsample!r} seed={c.seed}\n"
    )
    buf.write(f"base {model.base_prediction!r}\n")
    buf.write(f"trees {len(model.trees)}\n")
    for k, t in enumerate(model.trees):
        buf.write(f"tree {k} {t.n_nodes}\n")
        for i in range(t.n_nodes):
            buf.write(f"{t.feature[i]} {float(t.threshold[i])!r} {t.left[i]} {t.right[i]} {float(t.value[i])!r}\n")
    buf.write("end\n")
    return buf.getvalue()


def deserialize(text) -> GbdtModel:
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("MODEL v"):
        raise CorruptModel("missing MODEL header")
    if lines[0] != f"MODEL v{FORMAT_VERSION}":
        raise VersionMismatch(f"unsupported model format {lines[0]!r}")
    try:
        it = iter(lines[1:])
        tag, *names = next(it).split(" ")
        assert tag == "features"
        tag, *kv = next(it).split(" ")
        assert tag == "config"
        cfg = dict(item.split("=", 1) for item in kv)
        config = TrainConfig(
            int(cfg["n_trees"]),
            int(cfg["max_depth"]),
            float(cfg["learning_rate"]),
            int(cfg["min_samples_leaf"]),
            float(cfg["subsample"]),
            int(cfg["seed"]),
        )
        tag, base = next(it).split(" ")
        assert tag == "base"
        tag, n_trees = next(it).split(" ")
        assert tag == "trees"
        trees = []
        for k in range(int(n_trees)):
            tag, idx, n_nodes = next(it).split(" ")
            assert tag == "tree" and int(idx) == k
            rows = [next(it).split(" ") for _ in range(int(n_nodes))]
            assert all(len(r) == 5 for r in rows)
            tree = Tree(
                np.array([int(r[0]) for r in rows], dtype=int),
                np.array([float(r[1]) for r in rows]),
                np.array([int(r[2]) for r in rows], dtype=int),
                np.array([int(r[3]) for r in rows], dtype=int),
                np.array([float(r[4]) for r in rows]),
            )
            _validate_tree(tree, len(names))
            trees.append(tree)
        assert next(it) == "end"
    except (StopIteration, AssertionError, ValueError, KeyError) as exc:
        raise CorruptModel(f"malformed model text: {exc!r}") from None
    return GbdtModel(float(base), trees, names, config)


def _validate_tree(t: Tree, n_features: int):
    n = t.n_nodes
    inner = t.feature >= 0
    if n == 0 or np.any(t.feature >= n_features) or np.any(t.feature < -1):
        raise ValueError("bad feature index")
    if np.any(inner & ((t.left <= 0) | (t.left >= n) | (t.right <= 0) | (t.right >= n))):
        raise ValueError("bad child index")
    if not np.all(np.isfinite(t.value)):
        raise ValueError("non-finite leaf value")


class GbdtRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper over :func:`fit` / :func:`predict`."""

    def __init__(self, n_trees=300, max_depth=6, learning_rate=0.1, min_samples_leaf=20, subsample=1.0, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            self.n_trees, self.max_depth, self.learning_rate, self.min_samples_leaf, self.subsample, self.seed
        )

    def fit(self, X, y):
        names = [str(c) for c in X.columns] if hasattr(X, "columns") else None
        self.model_ = fit(np.asarray(X, dtype=float), y, self._config(), names)
        self.n_features_in_ = self.model_.n_features
        if names is not None:
            self.feature_names_in_ = np.array(names, dtype=object)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        if hasattr(X, "columns") and hasattr(self, "feature_names_in_"):
            X = X[list(self.feature_names_in_)]
        return predict(self.model_, X)

    @classmethod
    def from_model(cls, model: GbdtModel) -> "GbdtRegressor":
        c = model.config
        est = cls(c.n_trees, c.max_depth, c.learning_rate, c.min_samples_leaf, c.subsample, c.seed)
        est.model_ = model
        est.n_features_in_ = model.n_features
        return est
