"""Run manifests and the data pipeline shared by the command line and tests.

A manifest is a plain ``key=value`` file. Environment-specific keys use the
``env.<name>.<key>`` form; everything else is global. Unknown keys are
rejected, and every referenced file must exist when the manifest is loaded.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import pandas as pd

from .augment import SmoteConfig
from .empirical import EmpiricalModelId
from .ensemble import Metric, Validation
from .evaluation import SCARCITY_FRACTION, SCENARIO_TRAIN_CONFIG, ExperimentData, ScenarioSettings
from .exceptions import ConfigError, DataError, MalformedHeader
from .features import DEFAULT_RX_HEIGHT, BaseStation
from .geodesy import LocalXY
from .learner import TrainConfig
from .raster import TerrainDataset, load_terrain, parse_kv
from .reference import (
    DEFAULT_VBW_DEG,
    N_MIN,
    RSRP_THRESHOLD_DBM,
    SiteBaseline,
    earfcn_to_freq,
    ingest_measurements,
    label_measurements,
    read_measurements,
    read_registry,
)
from .simulator import DEFAULT_TILT_DEG, SimConfig, simulate_links

SEED_ENV_VAR = "PATHLOSS_SEED"

GLOBAL_KEYS = {
    "measurements": str,
    "bs_registry": str,
    "seed": int,
    "rsrp_threshold_dbm": float,
    "n_min": int,
    "vbw_default_deg": float,
    "rx_height_m": float,
    "sim_model": str,
    "sim_tilt_deg": float,
    "spm_k1": float,
    "spm_k2": float,
    "spm_k3": float,
    "spm_k4": float,
    "spm_k5": float,
    "spm_k6": float,
    "train_n_trees": int,
    "train_max_depth": int,
    "train_learning_rate": float,
    "train_min_samples_leaf": int,
    "train_subsample": float,
    "smote_k": int,
    "smote_multiplier": float,
    "scarcity_fraction": float,
    "metric": str,
    "weight_step": float,
    "val_fraction": float,
    "validation": str,
    "split_block_m": float,
    "out": str,
}
ENV_KEYS = {
    "dsm": str,
    "dhm": str,
    "units": str,
    "origin_lat": float,
    "origin_lon": float,
    "sim_spacing": float,
    "sim_bbox": str,
}
FILE_KEYS = ("measurements", "bs_registry")
ENV_FILE_KEYS = ("dsm", "dhm")


def _convert(key, value, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


@dataclass
class RunManifest:
    path: str
    base: str
    values: Dict[str, object]
    envs: Dict[str, Dict[str, object]]
    text_hash: str

    @classmethod
    def load(cls, path) -> "RunManifest":
        if not os.path.isfile(path):
            raise ConfigError(f"manifest {path} not found")
        with open(path) as fh:
            text = fh.read()
        try:
            kv = parse_kv(text)
        except MalformedHeader as exc:
            raise ConfigError(str(exc)) from None
        base = os.path.dirname(os.path.abspath(path))
        values, envs = {}, {}
        for key, value in kv.items():
            if key.startswith("env."):
                parts = key.split(".")
                if len(parts) != 3 or parts[2] not in ENV_KEYS:
                    raise ConfigError(f"unknown manifest key {key!r}")
                envs.setdefault(parts[1], {})[parts[2]] = _convert(key, value, ENV_KEYS[parts[2]])
            elif key in GLOBAL_KEYS:
                values[key] = _convert(key, value, GLOBAL_KEYS[key])
            else:
                raise ConfigError(f"unknown manifest key {key!r}")
        m = cls(os.path.abspath(path), base, values, envs, hashlib.sha256(text.encode()).hexdigest())
        m._check_files()
        return m

    def _check_files(self):
        for key in FILE_KEYS:
            if key in self.values and not os.path.isfile(self.resolve(self.values[key])):
                raise ConfigError(f"{key}: file {self.values[key]} not found")
        for env, kv in self.envs.items():
            for key in ENV_FILE_KEYS:
                if key not in kv:
                    raise ConfigError(f"env.{env}.{key} is required")
                if not os.path.isfile(self.resolve(kv[key])):
                    raise ConfigError(f"env.{env}.{key}: file {kv[key]} not found")
            for key in ("origin_lat", "origin_lon"):
                if key not in kv:
                    raise ConfigError(f"env.{env}.{key} is required")

    def resolve(self, rel) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.base, rel)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"manifest key {key!r} is required for this command")
        return self.values[key]

    def seed(self, override: Optional[int] = None) -> int:
        if override is not None:
            return int(override)
        env = os.environ.get(SEED_ENV_VAR)
        if env not in (None, ""):
            return _convert(SEED_ENV_VAR, env, int)
        return int(self.get("seed", 0))

    @property
    def env_names(self) -> List[str]:
        return sorted(self.envs)

    def train_config(self, seed: int = 0) -> TrainConfig:
        d = SCENARIO_TRAIN_CONFIG
        try:
            return TrainConfig(
                self.get("train_n_trees", d.n_trees),
                self.get("train_max_depth", d.max_depth),
                self.get("train_learning_rate", d.learning_rate),
                self.get("train_min_samples_leaf", d.min_samples_leaf),
                self.get("train_subsample", d.subsample),
                seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def settings(self, seed: int = 0) -> ScenarioSettings:
        try:
            return ScenarioSettings(
                fraction=self.get("scarcity_fraction", SCARCITY_FRACTION),
                train=self.train_config(seed),
                smote=SmoteConfig(self.get("smote_k", 5), None, self.get("smote_multiplier", 1.0), seed),
                metric=Metric(self.get("metric", "MAE")),
                step=self.get("weight_step", 0.01),
                val_fraction=self.get("val_fraction", 0.2),
                validation=Validation(self.get("validation", "real")),
                split_block_m=self.get("split_block_m"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def spm_coeffs(self) -> Dict[str, float]:
        return {k[4:]: v for k, v in self.values.items() if k.startswith("spm_")}

    def sim_model(self) -> EmpiricalModelId:
        try:
            return EmpiricalModelId(self.get("sim_model", "FSPL"))
        except ValueError:
            raise ConfigError(f"unknown sim_model {self.get('sim_model')!r}") from None


@dataclass
class Pipeline:
    """Lazily computed, cached pipeline stages for one manifest."""

    manifest: RunManifest
    _terrain: Dict[str, TerrainDataset] = field(default_factory=dict)
    _real: Dict[str, Tuple[pd.DataFrame, Dict[str, SiteBaseline]]] = field(default_factory=dict)
    _synth: Dict[str, pd.DataFrame] = field(default_factory=dict)
    _registry: Optional[Dict[str, BaseStation]] = None
    _records: Optional[pd.DataFrame] = None

    @property
    def rx_height(self) -> float:
        return self.manifest.get("rx_height_m", DEFAULT_RX_HEIGHT)

    def terrain(self, env: str) -> TerrainDataset:
        if env not in self.manifest.envs:
            raise ConfigError(f"environment {env!r} is not defined in the manifest")
        if env not in self._terrain:
            kv = {k: str(v) for k, v in self.manifest.envs[env].items()}
            self._terrain[env] = load_terrain(kv, self.manifest.base)
        return self._terrain[env]

    def registry(self) -> Dict[str, BaseStation]:
        if self._registry is None:
            path = self.manifest.resolve(self.manifest.require("bs_registry"))
            self._registry = read_registry(path, self.manifest.get("vbw_default_deg", DEFAULT_VBW_DEG))
        return self._registry

    def records(self) -> pd.DataFrame:
        if self._records is None:
            self._records = read_measurements(self.manifest.resolve(self.manifest.require("measurements")))
        return self._records

    def stations(self, env: str) -> List[BaseStation]:
        """Base stations serving measurements of ``env`` (or registered for it)."""
        ids = set(self.records().loc[self.records()["env"] == env, "bs_id"])
        path = self.manifest.resolve(self.manifest.require("bs_registry"))
        reg = pd.read_csv(path, dtype={"bs_id": str})
        if "env" in reg.columns:
            ids |= set(reg.loc[reg["env"] == env, "bs_id"])
        missing = ids - set(self.registry())
        if missing:
            raise DataError(f"base stations {sorted(missing)} are not in the registry")
        return [self.registry()[i] for i in sorted(ids)]

    def ingest(self, env: str) -> pd.DataFrame:
        recs = self.records()
        recs = recs[recs["env"] == env]
        frames = [ingest_measurements(recs, bs, self.terrain(env), self.rx_height) for bs in self.stations(env)]
        if not frames:
            raise DataError(f"no measurements for environment {env!r}")
        return pd.concat(frames, ignore_index=True)

    def real(self, env: str) -> Tuple[pd.DataFrame, Dict[str, SiteBaseline]]:
        """Labelled real feature table and the per-site baselines."""
        if env not in self._real:
            links = self.ingest(env)
            m = self.manifest
            frames, bases = [], {}
            for bs in self.stations(env):
                part = links[links["bs_id"] == bs.id].reset_index(drop=True)
                if part.empty:
                    continue
                lab, base = label_measurements(
                    part,
                    bs,
                    env,
                    self.rx_height,
                    m.get("rsrp_threshold_dbm", RSRP_THRESHOLD_DBM),
                    m.get("n_min", N_MIN),
                    sim_model=m.sim_model(),
                    spm_coeffs=m.spm_coeffs(),
                )
                frames.append(lab)
                bases[bs.id] = base
            self._real[env] = (pd.concat(frames, ignore_index=True), bases)
        return self._real[env]

    def sim_config(self, env: str) -> SimConfig:
        kv = self.manifest.envs[env]
        t = self.terrain(env)
        if "sim_bbox" in kv:
            try:
                x0, y0, x1, y1 = (float(v) for v in str(kv["sim_bbox"]).split(","))
            except ValueError:
                raise ConfigError(f"env.{env}.sim_bbox must be xmin,ymin,xmax,ymax") from None
        else:
            x0, y0, x1, y1 = t.dsm.extent
        stations = self.stations(env)
        carriers = sorted({c for bs in stations for c in bs.carriers})
        if not carriers and self._has_measurements(env):
            carriers = sorted({earfcn_to_freq(e) for e in self.records().loc[self.records()["env"] == env, "earfcn"]})
        return SimConfig(
            env,
            (LocalXY(x0, y0), LocalXY(x1, y1)),
            float(kv.get("sim_spacing", 50.0)),
            tuple(bs.id for bs in stations),
            tuple(carriers),
            self.manifest.sim_model(),
            self.rx_height,
            self.manifest.get("sim_tilt_deg", DEFAULT_TILT_DEG),
            self.manifest.get("n_min", N_MIN),
        )

    def synthetic(self, env: str, use_measured_baselines: bool = True) -> pd.DataFrame:
        if env not in self._synth:
            baselines = self.real(env)[1] if use_measured_baselines and self._has_measurements(env) else None
            self._synth[env] = simulate_links(self.sim_config(env), self.registry(), self.terrain(env), baselines)
        return self._synth[env]

    def _has_measurements(self, env: str) -> bool:
        return "measurements" in self.manifest.values and bool((self.records()["env"] == env).any())

    def experiment_data(self, envs: Optional[List[str]] = None) -> ExperimentData:
        envs = envs or self.manifest.env_names
        real = {e: self.real(e)[0] for e in envs if self._has_measurements(e)}
        synth = {e: self.synthetic(e) for e in envs}
        return ExperimentData(real, synth)
