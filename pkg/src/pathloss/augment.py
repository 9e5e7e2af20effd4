"""SMOTE adapted to regression on feature tables.

New rows are drawn on the segment between a measured sample and one of its
nearest neighbours from the same (environment, LoS) group. Features and the
target share the interpolation weight.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.neighbors import NearestNeighbors
from sklearn.preprocessing import StandardScaler

from .exceptions import InvalidK, TooFewSamples
from .features import FEATURE_NAMES

TARGET = "target_delta_rsrp"
GROUP_KEYS = ("env", "is_los")
# features entering the neighbour metric; is_los is a hard group key instead
DISTANCE_FEATURES = tuple(f for f in FEATURE_NAMES if f != "is_los")
# interpolated columns; frequency is snapped to the base carrier afterwards
INTERPOLATED = tuple(f for f in FEATURE_NAMES if f not in ("is_los", "freq_hz")) + ("lat", "lon", TARGET)


class GroupTooSmall(UserWarning):
    """A group has too few samples for the neighbour count and was skipped."""


def standardize(X) -> Tuple[np.ndarray, StandardScaler]:
    """Z-score the columns of ``X`` (population std; constant columns map to 0).

    With two samples every non-constant column becomes exactly -1 / +1.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("standardization needs at least two samples")
    scaler = StandardScaler().fit(X)
    return scaler.transform(X), scaler


def unstandardize(Z, scaler: StandardScaler) -> np.ndarray:
    return scaler.inverse_transform(np.asarray(Z, dtype=float))


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    n_synthetic: Optional[int] = None
    multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.k_neighbors) < 1:
            raise InvalidK(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.n_synthetic is not None and self.n_synthetic < 0:
            raise ValueError("n_synthetic must be non-negative")
        if self.multiplier < 0:
            raise ValueError("multiplier must be non-negative")

    def count(self, n_samples: int) -> int:
        if self.n_synthetic is not None:
            return int(self.n_synthetic)
        return int(round(self.multiplier * n_samples))


def _neighbours(Z: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of each row."""
    nn = NearestNeighbors(n_neighbors=k + 1, algorithm="brute").fit(Z)
    _, idx = nn.kneighbors(Z)
    out = np.empty((len(Z), k), dtype=int)
    for i, row in enumerate(idx):
        others = row[row != i]
        out[i] = others[:k]
    return out


def interpolate(base, neighbor, lam):
    """Point at weight ``lam`` on the segment base -> neighbor.

    Exact at both ends; clipping absorbs rounding so results stay on the
    closed segment.
    """
    base = np.asarray(base, dtype=float)
    neighbor = np.asarray(neighbor, dtype=float)
    out = (1.0 - lam) * base + lam * neighbor
    return np.clip(out, np.minimum(base, neighbor), np.maximum(base, neighbor))


def smote_regression(samples: pd.DataFrame, config: SmoteConfig = SmoteConfig()) -> pd.DataFrame:
    """Synthetic rows; the input is left untouched.

    Each output row records its parents (``parent_base``,
    ``parent_neighbor``) and interpolation weight ``lambda``.
    """
    k = int(config.k_neighbors)
    if len(samples) == 0:
        return _empty(samples)
    samples = samples.reset_index(drop=True)
    Z, _ = standardize(samples[list(DISTANCE_FEATURES)].to_numpy(dtype=float))

    eligible, neigh = [], {}
    for key, grp in samples.groupby(list(GROUP_KEYS), sort=True):
        rows = grp.index.to_numpy()
        if len(rows) <= k:
            warnings.warn(f"group {key} has {len(rows)} samples (needs > {k}); skipped", GroupTooSmall)
            continue
        nb = _neighbours(Z[rows], k)
        for local, i in enumerate(rows):
            neigh[i] = rows[nb[local]]
        eligible.extend(rows.tolist())
    n_new = config.count(len(samples))
    if not eligible or n_new == 0:
        return _empty(samples)
    eligible = np.array(sorted(eligible))

    rng = np.random.default_rng(config.seed)
    base = np.empty(n_new, dtype=int)
    other = np.empty(n_new, dtype=int)
    lam = np.empty(n_new)
    for t in range(n_new):
        b = eligible[rng.integers(len(eligible))]
        base[t] = b
        other[t] = neigh[b][rng.integers(k)]
        lam[t] = rng.random()

    cols = [c for c in INTERPOLATED if c in samples.columns]
    vb = samples[cols].to_numpy(dtype=float)[base]
    vn = samples[cols].to_numpy(dtype=float)[other]
    vals = interpolate(vb, vn, lam[:, None])
    new = pd.DataFrame(vals, columns=cols)
    parents = samples.iloc[base].reset_index(drop=True)
    new["freq_hz"] = parents["freq_hz"].to_numpy()
    new["is_los"] = parents["is_los"].to_numpy()
    for c in ("bs_id", "env"):
        if c in samples.columns:
            new[c] = parents[c].to_numpy()
    new["source_tag"] = "smote"
    ids = samples["record_id"].astype(str).to_numpy() if "record_id" in samples else np.arange(len(samples)).astype(str)
    new["record_id"] = [f"smote-{config.seed}-{t}" for t in range(n_new)]
    new["parent_base"] = ids[base]
    new["parent_neighbor"] = ids[other]
    new["lambda"] = lam
    order = [c for c in samples.columns if c in new.columns] + ["parent_base", "parent_neighbor", "lambda"]
    return new[order]


def _empty(samples: pd.DataFrame) -> pd.DataFrame:
    return pd.DataFrame(columns=list(samples.columns) + ["parent_base", "parent_neighbor", "lambda"])


class SmoteRegressor(BaseEstimator):
    """Estimator-style wrapper around :func:`smote_regression`."""

    def __init__(self, k_neighbors=5, n_synthetic=None, multiplier=1.0, random_state=0):
        self.k_neighbors = k_neighbors
        self.n_synthetic = n_synthetic
        self.multiplier = multiplier
        self.random_state = random_state

    def _config(self):
        return SmoteConfig(self.k_neighbors, self.n_synthetic, self.multiplier, self.random_state)

    def sample(self, samples: pd.DataFrame) -> pd.DataFrame:
        """Synthetic rows only."""
        return smote_regression(samples, self._config())

    def fit_resample(self, samples: pd.DataFrame) -> pd.DataFrame:
        """Original rows followed by the synthetic ones."""
        return pd.concat([samples, self.sample(samples)], ignore_index=True)
