"""Weighted real / synthetic / combined model ensemble.

Three boosted models are trained on real data, synthetic data and their union;
their validation predictions are blended with simplex weights found by an
exhaustive grid search.
"""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CorruptModel, EmptyValidation, LengthMismatch
from .features import FEATURE_NAMES
from .learner import GbdtModel, TrainConfig, deserialize, fit, predict, serialize
from .raster import parse_kv

TARGET = "target_delta_rsrp"
DEFAULT_STEP = 0.01
VAL_FRACTION = 0.2
# relative loss difference below which two grid points count as tied
TIE_TOLERANCE = 1e-12
_CHUNK_ELEMENTS = 4_000_000


class Metric(str, enum.Enum):
    MAE = "MAE"
    RMSE = "RMSE"


@dataclass
class Triplet:
    m_real: GbdtModel
    m_synth: GbdtModel
    m_combined: GbdtModel

    def predict_all(self, X) -> np.ndarray:
        """3 x N matrix of member predictions."""
        return np.vstack([predict(m, X) for m in (self.m_real, self.m_synth, self.m_combined)])


@dataclass
class EnsembleModel:
    m_real: GbdtModel
    m_synth: GbdtModel
    m_combined: GbdtModel
    w: Tuple[float, float, float]
    metric: Metric
    val_loss: float = float("nan")

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != 3 or min(w) < 0 or max(w) > 1 or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights {w} are not on the simplex")
        self.w = w
        self.metric = Metric(self.metric)

    @property
    def members(self) -> Tuple[GbdtModel, GbdtModel, GbdtModel]:
        return self.m_real, self.m_synth, self.m_combined


def _xy(df: pd.DataFrame, features: Sequence[str] = FEATURE_NAMES):
    return df[list(features)].to_numpy(dtype=float), df[TARGET].to_numpy(dtype=float)


def fit_frame(df: pd.DataFrame, config: TrainConfig, features: Sequence[str] = FEATURE_NAMES) -> GbdtModel:
    X, y = _xy(df, features)
    return fit(X, y, config, features)


def train_triplet(
    real: pd.DataFrame,
    synth: pd.DataFrame,
    config: TrainConfig = TrainConfig(),
    features: Sequence[str] = FEATURE_NAMES,
) -> Triplet:
    if len(real) == 0 or len(synth) == 0:
        raise EmptyValidation("both real and synthetic training sets must be non-empty")
    both = pd.concat([real, synth], ignore_index=True)
    return Triplet(*(fit_frame(d, config, features) for d in (real, synth, both)))


def simplex_grid(step: float = DEFAULT_STEP) -> np.ndarray:
    """All (i s, j s, 1 - i s - j s) >= 0 in lexicographic order."""
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} does not divide 1")
    ij = [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]
    g = np.array([(i, j, n - i - j) for i, j in ij], dtype=float) / n
    return g


def blend_loss(preds: np.ndarray, truth: np.ndarray, weights: np.ndarray, metric: Metric) -> np.ndarray:
    """Loss of each weight row applied to the 3 x N prediction matrix."""
    metric = Metric(metric)
    out = np.empty(len(weights))
    chunk = max(1, _CHUNK_ELEMENTS // max(1, preds.shape[1]))
    for a in range(0, len(weights), chunk):
        err = weights[a : a + chunk] @ preds - truth[None, :]
        if metric is Metric.MAE:
            out[a : a + chunk] = np.mean(np.abs(err), axis=1)
        else:
            out[a : a + chunk] = np.sqrt(np.mean(err * err, axis=1))
    return out


def pick_tied_min(losses: np.ndarray) -> int:
    """First index whose loss ties the minimum (within the relative tolerance)."""
    best = float(np.min(losses))
    tol = TIE_TOLERANCE * max(1.0, abs(best))
    return int(np.flatnonzero(losses <= best + tol)[0])


def optimize_weights(
    preds, truth, metric: Metric = Metric.MAE, step: float = DEFAULT_STEP
) -> Tuple[Tuple[float, float, float], float]:
    """Grid argmin of the blended validation loss; ties go to the smallest (w1, w2, w3)."""
    preds = np.asarray(preds, dtype=float)
    truth = np.asarray(truth, dtype=float).ravel()
    if truth.size == 0:
        raise EmptyValidation("validation set is empty")
    if preds.shape != (3, truth.size):
        raise LengthMismatch(f"predictions of shape {preds.shape} do not match {truth.size} targets")
    grid = simplex_grid(step)
    losses = blend_loss(preds, truth, grid, metric)
    k = pick_tied_min(losses)
    return tuple(float(x) for x in grid[k]), float(losses[k])


def predict_ensemble(model: EnsembleModel, X) -> np.ndarray:
    w1, w2, w3 = model.w
    return w1 * predict(model.m_real, X) + w2 * predict(model.m_synth, X) + w3 * predict(model.m_combined, X)


def split_train_val(df: pd.DataFrame, val_fraction: float = VAL_FRACTION, seed: int = 0):
    """Seeded random split; the validation part gets ``floor(val_fraction * n)`` rows."""
    n = len(df)
    n_val = int(np.floor(val_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    val = np.zeros(n, dtype=bool)
    val[perm[:n_val]] = True
    return df[~val], df[val]


class Validation(str, enum.Enum):
    """Which held-out rows the blend weights are fitted on."""

    REAL = "real"
    POOLED = "pooled"
    BALANCED = "balanced"


def validation_losses(
    trip: Triplet,
    real_val: pd.DataFrame,
    synth_val: pd.DataFrame,
    grid: np.ndarray,
    metric: Metric = Metric.MAE,
    validation: Validation = Validation.REAL,
    features: Sequence[str] = FEATURE_NAMES,
) -> np.ndarray:
    """Blend loss of every grid point.

    ``real`` scores the real validation rows only, ``pooled`` scores the
    union, ``balanced`` averages the per-source losses.
    """
    validation = Validation(validation)
    Xr, yr = _xy(real_val, features)
    Xs, ys = _xy(synth_val, features)
    if validation is Validation.REAL or len(ys) == 0:
        if len(yr) == 0:
            raise EmptyValidation("real validation set is empty")
        return blend_loss(trip.predict_all(Xr), yr, grid, metric)
    if len(yr) == 0 and validation is Validation.BALANCED:
        raise EmptyValidation("real validation set is empty")
    if validation is Validation.POOLED:
        X = np.vstack([Xr, Xs])
        return blend_loss(trip.predict_all(X), np.concatenate([yr, ys]), grid, metric)
    lr = blend_loss(trip.predict_all(Xr), yr, grid, metric)
    ls = blend_loss(trip.predict_all(Xs), ys, grid, metric)
    return 0.5 * (lr + ls)


def fit_ensemble(
    real_train: pd.DataFrame,
    synth_train: pd.DataFrame,
    real_val: pd.DataFrame,
    synth_val: pd.DataFrame,
    config: TrainConfig = TrainConfig(),
    metric: Metric = Metric.MAE,
    step: float = DEFAULT_STEP,
    validation: Validation = Validation.REAL,
    features: Sequence[str] = FEATURE_NAMES,
) -> EnsembleModel:
    """Train the triplet and fit the blend weights on the held-out rows."""
    trip = train_triplet(real_train, synth_train, config, features)
    grid = simplex_grid(step)
    losses = validation_losses(trip, real_val, synth_val, grid, metric, validation, features)
    k = pick_tied_min(losses)
    return EnsembleModel(trip.m_real, trip.m_synth, trip.m_combined, tuple(grid[k]), metric, float(losses[k]))


def content_hash(data) -> str:
    if isinstance(data, pd.DataFrame):
        data = data.to_csv(index=False, float_format="%.17g").encode()
    elif isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


MEMBER_FILES = ("model_real.txt", "model_synth.txt", "model_combined.txt")


def save_ensemble(model: EnsembleModel, directory, data_hashes: Optional[dict] = None) -> str:
    """Write the three member files and a key=value manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name, m in zip(MEMBER_FILES, model.members):
        text = serialize(m)
        with open(os.path.join(directory, name), "w") as fh:
            fh.write(text)
        lines.append(f"{name.split('.')[0]}={name}")
        lines.append(f"{name.split('.')[0]}_sha256={content_hash(text)}")
    lines += [f"w{i + 1}={w!r}" for i, w in enumerate(model.w)]
    lines.append(f"metric={model.metric.value}")
    lines.append(f"val_loss={model.val_loss!r}")
    for k, v in sorted((data_hashes or {}).items()):
        lines.append(f"data_{k}_sha256={v}")
    path = os.path.join(directory, "ensemble.manifest")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_ensemble(manifest_path) -> EnsembleModel:
    with open(manifest_path) as fh:
        kv = parse_kv(fh.read())
    base = os.path.dirname(os.path.abspath(manifest_path))
    members = []
    for name in MEMBER_FILES:
        key = name.split(".")[0]
        with open(os.path.join(base, kv[key])) as fh:
            text = fh.read()
        if content_hash(text) != kv.get(f"{key}_sha256"):
            raise CorruptModel(f"{kv[key]}: content hash does not match the manifest")
        members.append(deserialize(text))
    w = (float(kv["w1"]), float(kv["w2"]), float(kv["w3"]))
    return EnsembleModel(*members, w, Metric(kv["metric"]), float(kv.get("val_loss", "nan")))


class WeightedEnsembleRegressor(RegressorMixin, BaseEstimator):
    """Estimator form of the ensemble.

    ``fit(X, y, synthetic)`` takes a boolean mask marking synthetic rows.
    Each source is split 80/20; ``validation`` selects the held-out rows
    the weights are fitted on (see :class:`Validation`).
    """

    def __init__(
        self,
        n_trees=300,
        max_depth=6,
        learning_rate=0.1,
        min_samples_leaf=20,
        subsample=1.0,
        seed=0,
        metric="MAE",
        step=DEFAULT_STEP,
        val_fraction=VAL_FRACTION,
        validation="real",
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.seed = seed
        self.metric = metric
        self.step = step
        self.val_fraction = val_fraction
        self.validation = validation

    def fit(self, X, y, synthetic: Sequence[bool]):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        synthetic = np.asarray(synthetic, dtype=bool)
        if not (len(X) == len(y) == len(synthetic)):
            raise LengthMismatch("X, y and synthetic differ in length")
        names = [f"x{j}" for j in range(X.shape[1])]
        df = pd.DataFrame(X, columns=names)
        df[TARGET] = y
        real, synth = df[~synthetic], df[synthetic]
        rt, rv = split_train_val(real, self.val_fraction, self.seed)
        st, sv = split_train_val(synth, self.val_fraction, self.seed)
        cfg = TrainConfig(
            self.n_trees, self.max_depth, self.learning_rate, self.min_samples_leaf, self.subsample, self.seed
        )
        self.model_ = fit_ensemble(rt, st, rv, sv, cfg, Metric(self.metric), self.step, self.validation, names)
        self.weights_ = self.model_.w
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_ensemble(self.model_, np.asarray(X, dtype=float))
