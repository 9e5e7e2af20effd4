"""Synthetic relative-RSRP samples on regular grids.

The physics core is an empirical median (free space by default) plus Deygout
diffraction over the lidar profile. Targets are expressed against a per-site
path-loss reference exactly like measured data, so synthetic and real samples
share one scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .empirical import EmpiricalModelId
from .exceptions import ConfigError, EmptyGrid, OutOfExtent
from .features import DEFAULT_RX_HEIGHT, BaseStation, featurize_links
from .geodesy import GeoPoint, LocalXY, unproject
from .raster import TerrainDataset
from .reference import (
    DEFAULT_VBW_DEG,
    N_MIN,
    SIM_MODEL_KEY,
    SiteBaseline,
    compute_baselines,
    delta_rsrp_model,
    mainlobe_subset,
    model_path_losses,
    pl_column,
    with_look_down_angle,
)

DEFAULT_TILT_DEG = 6.0


@dataclass(frozen=True)
class SimConfig:
    env: str
    bbox: Tuple[LocalXY, LocalXY]
    spacing: float
    bs_ids: Tuple[str, ...]
    freqs: Tuple[float, ...]
    sim_model: EmpiricalModelId = EmpiricalModelId.FSPL
    rx_h_agl: float = DEFAULT_RX_HEIGHT
    default_tilt_deg: float = DEFAULT_TILT_DEG
    n_min: int = N_MIN

    def __post_init__(self):
        if not self.spacing > 0:
            raise ConfigError("grid spacing must be positive")
        lo, hi = self.bbox
        if not (hi.x > lo.x and hi.y > lo.y):
            raise ConfigError("bounding box is degenerate")
        if not self.freqs:
            raise ConfigError("at least one carrier frequency is required")
        object.__setattr__(self, "bs_ids", tuple(self.bs_ids))
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        object.__setattr__(self, "sim_model", EmpiricalModelId(self.sim_model))


@dataclass(frozen=True)
class GridPoint:
    index: int
    xy: LocalXY
    geo: GeoPoint


def _axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    # floor(extent / spacing) + 1 points anchored at the lower corner
    n = int(math.floor((hi - lo) / spacing + 1e-9)) + 1
    return lo + spacing * np.arange(n)


def generate_grid(config: SimConfig, terrain: TerrainDataset) -> List[GridPoint]:
    """Regular receiver grid over ``config.bbox``.

    Points falling in a DSM or DHM nodata cell are left out. Grid indices
    are row-major (south to north, then west to east) and stay attached to
    the surviving points.
    """
    lo, hi = config.bbox
    xmin, ymin, xmax, ymax = terrain.dsm.extent
    if lo.x < xmin or lo.y < ymin or hi.x > xmax or hi.y > ymax:
        raise OutOfExtent("simulation bounding box exceeds the raster extent")
    xs = _axis(lo.x, hi.x, config.spacing)
    ys = _axis(lo.y, hi.y, config.spacing)
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    r = terrain.dsm
    j = np.minimum(((gx - r.xll) / r.cellsize).astype(int), r.ncols - 1)
    i = np.minimum(((gy - r.yll) / r.cellsize).astype(int), r.nrows - 1)
    valid = ~(np.isnan(terrain.dsm.values[i, j]) | np.isnan(terrain.dhm.values[i, j]))
    pts = []
    for k in np.flatnonzero(valid):
        xy = LocalXY(float(gx[k]), float(gy[k]), terrain.origin)
        pts.append(GridPoint(int(k), xy, unproject(xy)))
    if not pts:
        raise EmptyGrid("no valid grid point inside the bounding box")
    return pts


def simulated_baseline(
    links: pd.DataFrame,
    bs: BaseStation,
    tilt_deg: float = DEFAULT_TILT_DEG,
    n_min: int = N_MIN,
) -> SiteBaseline:
    """Path-loss reference from simulated LoS points in the default main lobe."""
    links = with_look_down_angle(links)
    cand = links[links["is_los"] == 1]
    vbw = bs.vbw_deg or DEFAULT_VBW_DEG
    subset = mainlobe_subset(cand, tilt_deg, vbw)
    return compute_baselines(subset, [SIM_MODEL_KEY], bs.id, tilt_deg, n_min)


def simulate_bs(
    config: SimConfig,
    bs: BaseStation,
    terrain: TerrainDataset,
    grid: Sequence[GridPoint],
    baseline: Optional[SiteBaseline] = None,
) -> Tuple[pd.DataFrame, SiteBaseline]:
    freqs = [config.freqs] * len(grid)
    feats, _ = featurize_links(bs, terrain, [g.geo for g in grid], freqs, config.rx_h_agl)
    pl = model_path_losses(
        feats,
        bs,
        environment=config.env,
        rx_h_agl=config.rx_h_agl,
        sim_model=config.sim_model,
        models=(),
    )
    feats[pl_column(SIM_MODEL_KEY)] = pl[pl_column(SIM_MODEL_KEY)]
    if baseline is None or SIM_MODEL_KEY not in baseline.pl_ref:
        baseline = simulated_baseline(feats, bs, config.default_tilt_deg, config.n_min)
    feats["target_delta_rsrp"] = delta_rsrp_model(feats[pl_column(SIM_MODEL_KEY)].to_numpy(), SIM_MODEL_KEY, baseline)
    geo = [grid[i].geo for i in feats["point_index"]]
    feats["record_id"] = [
        f"syn-{config.env}-{bs.id}-{f / 1e6:g}-{grid[i].index}" for f, i in zip(feats["freq_hz"], feats["point_index"])
    ]
    feats["bs_id"] = bs.id
    feats["env"] = config.env
    feats["lat"] = [g.lat for g in geo]
    feats["lon"] = [g.lon for g in geo]
    feats["source_tag"] = "synthetic"
    feats["grid_index"] = [grid[i].index for i in feats["point_index"]]
    return feats.drop(columns="point_index"), baseline


def simulate_links(
    config: SimConfig,
    registry: Mapping[str, BaseStation],
    terrain: TerrainDataset,
    baselines: Optional[Mapping[str, SiteBaseline]] = None,
    grid: Optional[Sequence[GridPoint]] = None,
) -> pd.DataFrame:
    """Synthetic feature table for every (bs, carrier, grid point).

    Output rows are ordered by BS (config order), carrier, then grid index.
    Links whose geometry cannot be evaluated are dropped.
    """
    grid = grid if grid is not None else generate_grid(config, terrain)
    baselines = dict(baselines or {})
    frames = []
    for k, bs_id in enumerate(config.bs_ids):
        if bs_id not in registry:
            raise ConfigError(f"unknown base station {bs_id!r}")
        df, _ = simulate_bs(config, registry[bs_id], terrain, grid, baselines.get(bs_id))
        frames.append(df.assign(_bs_order=k))
    out = pd.concat(frames, ignore_index=True)
    out = out.sort_values(["_bs_order", "freq_hz", "grid_index"], kind="mergesort")
    return out.drop(columns="_bs_order").reset_index(drop=True)
