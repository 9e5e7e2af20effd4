"""Terrain-aware path loss and delta-RSRP prediction."""

__version__ = "0.1.0"

from .exceptions import ComputeError, ConfigError, DataError, PathlossError  # noqa: E402
from .geodesy import GeoPoint, LocalXY, project, unproject  # noqa: E402
from .raster import Raster, TerrainDataset, read_ascii_grid  # noqa: E402
from .diffraction import deygout_loss, fresnel_nu, knife_edge_loss  # noqa: E402
from .empirical import EmpiricalModelId, LinkBudgetInput, fspl, path_loss  # noqa: E402
from .features import FEATURE_NAMES, BaseStation, FeatureVector, compute_features  # noqa: E402
from .reference import estimate_downtilt, label_measurements, site_baseline  # noqa: E402
from .simulator import SimConfig, simulate_links  # noqa: E402
from .augment import SmoteConfig, SmoteRegressor, smote_regression  # noqa: E402
from .learner import GbdtModel, GbdtRegressor, TrainConfig  # noqa: E402
from .ensemble import EnsembleModel, Metric, WeightedEnsembleRegressor, fit_ensemble  # noqa: E402
from .evaluation import MatrixMode, Scenario, cross_env_matrix, run_scenario  # noqa: E402

__all__ = [
    "__version__",
    "PathlossError",
    "ConfigError",
    "DataError",
    "ComputeError",
    "GeoPoint",
    "LocalXY",
    "project",
    "unproject",
    "Raster",
    "TerrainDataset",
    "read_ascii_grid",
    "fresnel_nu",
    "knife_edge_loss",
    "deygout_loss",
    "EmpiricalModelId",
    "LinkBudgetInput",
    "fspl",
    "path_loss",
    "FEATURE_NAMES",
    "BaseStation",
    "FeatureVector",
    "compute_features",
    "estimate_downtilt",
    "site_baseline",
    "label_measurements",
    "SimConfig",
    "simulate_links",
    "SmoteConfig",
    "SmoteRegressor",
    "smote_regression",
    "TrainConfig",
    "GbdtModel",
    "GbdtRegressor",
    "EnsembleModel",
    "Metric",
    "WeightedEnsembleRegressor",
    "fit_ensemble",
    "Scenario",
    "MatrixMode",
    "run_scenario",
    "cross_env_matrix",
]
