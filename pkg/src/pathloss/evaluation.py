"""Error metrics, data splits, data-scarcity scenarios and the cross-environment matrix."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .augment import SmoteConfig, smote_regression
from .ensemble import (
    VAL_FRACTION,
    Metric,
    Validation,
    fit_ensemble,
    fit_frame,
    predict_ensemble,
    split_train_val,
)
from .exceptions import ComputeError, EmptyInput, LengthMismatch, MissingDataset
from .features import FEATURE_NAMES
from .geodesy import R_EARTH
from .learner import TrainConfig, predict

TARGET = "target_delta_rsrp"
SCARCITY_FRACTION = 0.05

# configuration used for scenario and matrix runs; small data sets need small leaves
SCENARIO_TRAIN_CONFIG = TrainConfig(n_trees=150, max_depth=4, learning_rate=0.1, min_samples_leaf=5)


class LeakageError(ComputeError):
    """A test record reached a training or augmentation input."""


def _errors(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size:
        raise LengthMismatch(f"{pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise EmptyInput("no samples to score")
    return pred - truth


def mae(pred, truth) -> float:
    return float(np.mean(np.abs(_errors(pred, truth))))


def rmse(pred, truth) -> float:
    e = _errors(pred, truth)
    return float(np.sqrt(np.mean(e * e)))


def split_dataset(records: pd.DataFrame, seed: int, env_col: str = "env", block_m: Optional[float] = None):
    """Seeded 50/50 split per environment; the test half gets ``floor(n / 2)``.

    Membership depends only on the sorted record ids and the seed. With
    ``block_m`` set, whole square blocks of that size (from ``lat``/``lon``)
    go to the test half until it holds ``floor(n / 2)`` records, so the test
    count can overshoot by part of one block.
    Returns ``(test, train_pool)``.
    """
    test_ids = []
    for env, grp in records.groupby(env_col, sort=True):
        rng = np.random.default_rng([seed, _env_key(env)])
        if block_m is None:
            ids = np.sort(grp["record_id"].astype(str).to_numpy())
            test_ids.extend(ids[rng.permutation(len(ids))[: len(ids) // 2]])
            continue
        if block_m <= 0:
            raise ValueError("block_m must be positive")
        grp = grp.sort_values("record_id", key=lambda c: c.astype(str))
        ids = grp["record_id"].astype(str).to_numpy()
        keys = _block_keys(grp, block_m)
        blocks = np.unique(keys)
        take, n = [], 0
        for b in blocks[rng.permutation(len(blocks))]:
            if n >= len(ids) // 2:
                break
            take.append(b)
            n += int(np.sum(keys == b))
        test_ids.extend(ids[np.isin(keys, take)])
    is_test = records["record_id"].astype(str).isin(set(test_ids))
    return records[is_test], records[~is_test]


def _block_keys(grp: pd.DataFrame, block_m: float) -> np.ndarray:
    lat0, lon0 = grp["lat"].min(), grp["lon"].min()
    y = np.radians(grp["lat"].to_numpy() - lat0) * R_EARTH
    x = np.radians(grp["lon"].to_numpy() - lon0) * R_EARTH * np.cos(np.radians(lat0))
    bx, by = np.floor(x / block_m).astype(np.int64), np.floor(y / block_m).astype(np.int64)
    return by * 1_000_003 + bx


def _env_key(env) -> int:
    return int.from_bytes(str(env).encode()[:8].ljust(8, b"\0"), "little")


def scarcity_sample(pool: pd.DataFrame, fraction: float = SCARCITY_FRACTION, seed: int = 0) -> pd.DataFrame:
    """Seeded sample of ``round(fraction * len(pool))`` records of the pool."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = int(round(fraction * len(pool)))
    ids = np.sort(pool["record_id"].astype(str).to_numpy())
    keep = set(ids[np.random.default_rng(seed).permutation(len(ids))[:n]])
    return pool[pool["record_id"].astype(str).isin(keep)]


class Scenario(str, enum.Enum):
    SIM = "sim"
    REAL = "5pct_real"
    REAL_SMOTE = "5pct_real_smote"
    REAL_SIM = "5pct_real_sim"
    REAL_SMOTE_SIM = "5pct_real_smote_sim"

    @property
    def label(self) -> str:
        return {
            "sim": "SIM",
            "5pct_real": "5% Real",
            "5pct_real_smote": "5% Real + SMOTE",
            "5pct_real_sim": "5% Real + SIM",
            "5pct_real_smote_sim": "5% Real + SMOTE + SIM",
        }[self.value]

    @property
    def uses_real(self) -> bool:
        return self is not Scenario.SIM

    @property
    def uses_smote(self) -> bool:
        return self in (Scenario.REAL_SMOTE, Scenario.REAL_SMOTE_SIM)

    @property
    def uses_sim(self) -> bool:
        return self in (Scenario.SIM, Scenario.REAL_SIM, Scenario.REAL_SMOTE_SIM)


@dataclass
class ExperimentData:
    """Labelled feature tables per environment."""

    real: Dict[str, pd.DataFrame]
    synth: Dict[str, pd.DataFrame]

    def require(self, kind: str, env: str) -> pd.DataFrame:
        table = getattr(self, kind).get(env)
        if table is None or len(table) == 0:
            raise MissingDataset(f"no {kind} data for environment {env!r}")
        return table


@dataclass
class ScenarioSettings:
    fraction: float = SCARCITY_FRACTION
    train: TrainConfig = SCENARIO_TRAIN_CONFIG
    smote: SmoteConfig = field(default_factory=SmoteConfig)
    metric: Metric = Metric.MAE
    step: float = 0.01
    val_fraction: float = VAL_FRACTION
    validation: Validation = Validation.REAL
    split_block_m: Optional[float] = None


def _ids(df: pd.DataFrame) -> set:
    return set(df["record_id"].astype(str))


def assert_no_leakage(test: pd.DataFrame, *inputs: pd.DataFrame):
    """Raise if any test record id is a training row or a SMOTE parent."""
    test_ids = _ids(test)
    for df in inputs:
        used = _ids(df)
        for col in ("parent_base", "parent_neighbor"):
            if col in df.columns:
                used |= set(df[col].astype(str))
        bad = test_ids & used
        if bad:
            raise LeakageError(f"{len(bad)} test records found in training inputs, e.g. {sorted(bad)[:3]}")


def _score(pred, test) -> dict:
    y = test[TARGET].to_numpy()
    return {"mae_db": mae(pred, y), "rmse_db": rmse(pred, y), "n_test": int(len(test))}


def _single(train: pd.DataFrame, test: pd.DataFrame, cfg: TrainConfig) -> dict:
    model = fit_frame(train, cfg)
    pred = predict(model, test[list(FEATURE_NAMES)].to_numpy(dtype=float))
    return {**_score(pred, test), "n_train": int(len(train)), "w1": np.nan, "w2": np.nan, "w3": np.nan}


def _ensemble(real, synth, test, settings: ScenarioSettings, seed: int, smote: bool) -> dict:
    real_tr, real_val = split_train_val(real, settings.val_fraction, seed)
    syn_tr, syn_val = split_train_val(synth, settings.val_fraction, seed)
    if smote:
        aug = smote_regression(real_tr, _seeded(settings.smote, seed))
        assert_no_leakage(test, aug)
        real_tr = pd.concat([real_tr, aug], ignore_index=True)
    assert_no_leakage(test, real_tr, real_val, syn_tr, syn_val)
    model = fit_ensemble(
        real_tr, syn_tr, real_val, syn_val, settings.train, settings.metric, settings.step, settings.validation
    )
    pred = predict_ensemble(model, test[list(FEATURE_NAMES)].to_numpy(dtype=float))
    w1, w2, w3 = model.w
    return {**_score(pred, test), "n_train": int(len(real_tr) + len(syn_tr)), "w1": w1, "w2": w2, "w3": w3}


def _seeded(cfg: SmoteConfig, seed: int) -> SmoteConfig:
    return SmoteConfig(cfg.k_neighbors, cfg.n_synthetic, cfg.multiplier, seed)


def run_scenario(
    scenario: Scenario,
    test_env: str,
    data: ExperimentData,
    seed: int,
    settings: Optional[ScenarioSettings] = None,
    train_env: Optional[str] = None,
) -> dict:
    """One result row: train per the scenario, score on the held-out half of ``test_env``.

    Real training data comes from ``train_env`` (default: the test
    environment); synthetic data always comes from the test environment.
    """
    settings = settings or ScenarioSettings()
    scenario = Scenario(scenario)
    train_env = train_env or test_env
    test, _ = split_dataset(data.require("real", test_env), seed, block_m=settings.split_block_m)
    row = {"scenario": scenario.value, "label": scenario.label, "train_env": train_env, "test_env": test_env, "seed": seed}
    cfg = settings.train
    if scenario is Scenario.SIM:
        synth = data.require("synth", test_env)
        assert_no_leakage(test, synth)
        return {**row, **_single(synth, test, cfg)}

    _, pool = split_dataset(data.require("real", train_env), seed, block_m=settings.split_block_m)
    real = scarcity_sample(pool, settings.fraction, seed)
    if scenario is Scenario.REAL:
        assert_no_leakage(test, real)
        return {**row, **_single(real, test, cfg)}
    if scenario is Scenario.REAL_SMOTE:
        aug = smote_regression(real, _seeded(settings.smote, seed))
        assert_no_leakage(test, real, aug)
        return {**row, **_single(pd.concat([real, aug], ignore_index=True), test, cfg)}
    synth = data.require("synth", test_env)
    return {**row, **_ensemble(real, synth, test, settings, seed, scenario.uses_smote)}


RESULT_COLUMNS = (
    "scenario", "label", "train_env", "test_env", "seed", "mae_db", "rmse_db", "n_test", "n_train", "w1", "w2", "w3",
)


def result_table(rows: Iterable[dict]) -> pd.DataFrame:
    df = pd.DataFrame(list(rows))
    return df[[c for c in RESULT_COLUMNS if c in df.columns]]


class MatrixMode(str, enum.Enum):
    REAL_ONLY = "real_only"
    ENSEMBLE = "ensemble"


def matrix_cell(
    train_env: str,
    test_env: str,
    mode: MatrixMode,
    data: ExperimentData,
    seed: int,
    settings: Optional[ScenarioSettings] = None,
) -> dict:
    """Source real data (train half of ``train_env``), optionally plus target synthetic data."""
    settings = settings or ScenarioSettings()
    mode = MatrixMode(mode)
    test, _ = split_dataset(data.require("real", test_env), seed, block_m=settings.split_block_m)
    _, pool = split_dataset(data.require("real", train_env), seed, block_m=settings.split_block_m)
    row = {"mode": mode.value, "train_env": train_env, "test_env": test_env, "seed": seed}
    if mode is MatrixMode.REAL_ONLY:
        assert_no_leakage(test, pool)
        return {**row, **_single(pool, test, settings.train)}
    synth = data.require("synth", test_env)
    return {**row, **_ensemble(pool, synth, test, settings, seed, smote=False)}


def cross_env_matrix(
    envs: Sequence[str],
    mode: MatrixMode,
    data: ExperimentData,
    seed: int,
    settings: Optional[ScenarioSettings] = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """E x E result rows in (train_env, test_env) order."""
    if len(envs) < 2:
        raise ValueError("the matrix needs at least two environments")
    pairs = [(a, b) for a in envs for b in envs]
    rows = run_jobs(matrix_cell, [(a, b, mode, data, seed, settings) for a, b in pairs], n_jobs)
    cols = ["mode", "train_env", "test_env", "seed", "mae_db", "rmse_db", "n_test", "n_train", "w1", "w2", "w3"]
    return pd.DataFrame(rows)[cols]


def heatmap(matrix: pd.DataFrame, metric: str = "mae_db") -> pd.DataFrame:
    """Train environments as rows, test environments as columns."""
    return matrix.pivot(index="train_env", columns="test_env", values=metric)


def run_jobs(fn, arglist: List[tuple], n_jobs: int = 1) -> List[dict]:
    """Run ``fn(*args)`` for every entry; results keep the input order."""
    if n_jobs == 1 or len(arglist) < 2:
        return [fn(*a) for a in arglist]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*a) for a in arglist)


def scenario_table(
    scenarios: Sequence[Scenario],
    envs: Sequence[str],
    seeds: Sequence[int],
    data: ExperimentData,
    settings: Optional[ScenarioSettings] = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    jobs = [(Scenario(s), e, data, seed, settings) for s in scenarios for e in envs for seed in seeds]
    return result_table(run_jobs(run_scenario, jobs, n_jobs))


def summarize(results: pd.DataFrame, by: Sequence[str] = ("test_env", "scenario")) -> pd.DataFrame:
    """Median MAE / RMSE over seeds."""
    return results.groupby(list(by), sort=True)[["mae_db", "rmse_db"]].median().reset_index()


def experiment_data(tables: Mapping[str, pd.DataFrame]) -> ExperimentData:
    """Split labelled tables (with ``env`` and ``source_tag``) into an ExperimentData."""
    real, synth = {}, {}
    for df in tables.values():
        for env, grp in df.groupby("env", sort=True):
            for tag, part in grp.groupby("source_tag", sort=True):
                target = real if tag == "real" else synth if tag == "synthetic" else None
                if target is not None:
                    target[env] = pd.concat([target.get(env), part], ignore_index=True) if env in target else part
    return ExperimentData(real, synth)
