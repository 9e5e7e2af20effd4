"""A small generated world for tests, docs and end-to-end experiments.

Two environments, each with one base station:

* ``urban``: flat ground with blocks of buildings on a street grid.
* ``rural``: rolling hills with patches of trees.

Measured RSRP is produced by a propagation truth that is deliberately richer
than the simulator core: free space and Deygout diffraction, plus a clutter
excess loss, a steeper distance law, a vertical antenna pattern and 4 dB
log-normal shadowing. The simulator only knows the first two terms, so it
carries the kind of systematic bias that real measurements correct.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .features import BaseStation, featurize_links
from .geodesy import GeoPoint, LocalXY, project, unproject
from .raster import Raster, TerrainDataset, write_ascii_grid
from .reference import earfcn_to_freq, ingest_measurements, label_measurements
from .simulator import SimConfig, simulate_links

CELL = 10.0
SIZE = 160  # cells per side
TOWER_HEIGHT = 30.0
TRUE_TILT_DEG = 6.0
PATTERN_VBW_DEG = 10.0
EARFCNS = (900, 2175)  # band 2 (1960 MHz) and band 4 (2132.5 MHz)
RS_EIRP_DBM = 38.0
SHADOW_SIGMA_DB = 4.0
EXTRA_SLOPE_DB = 8.0
CLUTTER_DB_PER_M = 0.6
CLUTTER_CAP_DB = 15.0
MEAS_SPACING = 40.0
SIM_SPACING = 40.0
MIN_RANGE_M = 30.0

ENVS = {
    "urban": dict(origin=GeoPoint(40.0, -105.0), seed=11),
    "rural": dict(origin=GeoPoint(40.5, -105.5), seed=23),
}


def _urban(rng):
    ground = np.full((SIZE, SIZE), 100.0) + np.linspace(0, 4, SIZE)[None, :]
    dhm = np.zeros((SIZE, SIZE))
    block, street = 8, 3  # in cells
    c = SIZE // 2
    for i0 in range(0, SIZE, block + street):
        for j0 in range(0, SIZE, block + street):
            if rng.random() < 0.25:
                continue
            h = rng.uniform(6.0, 24.0)
            i1, j1 = min(i0 + block, SIZE), min(j0 + block, SIZE)
            dhm[i0:i1, j0:j1] = h
    # keep the site itself clear
    dhm[c - 3 : c + 3, c - 3 : c + 3] = 0.0
    return ground, dhm


def _rural(rng):
    xs = (np.arange(SIZE) + 0.5) * CELL
    gx, gy = np.meshgrid(xs, xs)
    ground = np.full((SIZE, SIZE), 300.0)
    for _ in range(14):
        cx, cy = rng.uniform(0, SIZE * CELL, 2)
        amp = rng.uniform(15.0, 55.0)
        width = rng.uniform(120.0, 350.0)
        ground += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * width**2))
    dhm = np.zeros((SIZE, SIZE))
    for _ in range(60):
        cx, cy = rng.integers(0, SIZE, 2)
        r = rng.integers(2, 6)
        h = rng.uniform(8.0, 18.0)
        mask = (np.arange(SIZE)[:, None] - cy) ** 2 + (np.arange(SIZE)[None, :] - cx) ** 2 <= r * r
        dhm[mask] = np.maximum(dhm[mask], h)
    c = SIZE // 2
    dhm[c - 3 : c + 3, c - 3 : c + 3] = 0.0
    return ground, dhm


def make_terrain(env: str) -> TerrainDataset:
    build = ENVIRONMENT_BUILDERS[env]
    rng = np.random.default_rng(ENVS[env]["seed"])
    ground, dhm = build(rng)
    origin = ENVS[env]["origin"]
    dsm = Raster(ground + dhm, 0.0, 0.0, CELL, origin=origin)
    return TerrainDataset(dsm, Raster(dhm, 0.0, 0.0, CELL, origin=origin), origin)


ENVIRONMENT_BUILDERS = {"urban": _urban, "rural": _rural}


def site_of(env: str) -> BaseStation:
    centre = LocalXY(SIZE * CELL / 2 + CELL / 2, SIZE * CELL / 2 + CELL / 2, ENVS[env]["origin"])
    return BaseStation(
        id=f"bs_{env}",
        location=unproject(centre),
        tower_height_agl=TOWER_HEIGHT,
        vbw_deg=PATTERN_VBW_DEG,
        carriers=tuple(earfcn_to_freq(e) for e in EARFCNS),
    )


def vertical_pattern_db(alpha_deg, tilt_deg=TRUE_TILT_DEG, vbw_deg=PATTERN_VBW_DEG):
    """Parabolic vertical pattern with a 20 dB floor."""
    a = np.asarray(alpha_deg, dtype=float)
    return -np.minimum(12.0 * ((a - tilt_deg) / vbw_deg) ** 2, 20.0)


def true_path_loss(links: pd.DataFrame) -> np.ndarray:
    """Propagation truth without shadowing, from the link features."""
    d3d = np.hypot(links["d_bs_m"], links["rel_bs_height_m"]).to_numpy()
    f_mhz = links["freq_hz"].to_numpy() / 1e6
    fspl = 32.45 + 20 * np.log10(f_mhz) + 20 * np.log10(np.maximum(d3d, 1.0) / 1000.0)
    slope = EXTRA_SLOPE_DB * np.log10(np.maximum(d3d, 100.0) / 100.0)
    clutter = np.minimum(CLUTTER_DB_PER_M * links["avg_clutter_height_m"].to_numpy(), CLUTTER_CAP_DB)
    clutter = np.where(links["is_los"].to_numpy() == 1, 0.0, clutter)
    return fspl + links["diffraction_loss_db"].to_numpy() + slope + clutter


def grid_points(terrain: TerrainDataset, spacing: float, offset: float, bs: BaseStation):
    xmin, ymin, xmax, ymax = terrain.dsm.extent
    xs = np.arange(xmin + offset, xmax - CELL, spacing)
    ys = np.arange(ymin + offset, ymax - CELL, spacing)
    centre = terrain_xy(terrain, bs)
    pts = []
    for y in ys:
        for x in xs:
            if math.hypot(x - centre.x, y - centre.y) >= MIN_RANGE_M:
                pts.append(unproject(LocalXY(float(x), float(y), terrain.origin)))
    return pts


def terrain_xy(terrain: TerrainDataset, bs: BaseStation) -> LocalXY:
    return project(terrain.origin, bs.location)


def measurements(env: str, terrain: Optional[TerrainDataset] = None) -> pd.DataFrame:
    """Measurement CSV rows for one environment (half-spacing offset grid)."""
    terrain = terrain or make_terrain(env)
    bs = site_of(env)
    pts = grid_points(terrain, MEAS_SPACING, MEAS_SPACING / 2 + 5.0, bs)
    freqs = [bs.carriers] * len(pts)
    feats, _ = featurize_links(bs, terrain, pts, freqs)
    rng = np.random.default_rng(ENVS[env]["seed"] + 1000)
    alpha = -feats["tilt_aoa_deg"].to_numpy()
    rsrp = RS_EIRP_DBM + vertical_pattern_db(alpha) - true_path_loss(feats)
    rsrp = rsrp + rng.normal(0.0, SHADOW_SIGMA_DB, len(rsrp))
    # phones report whole dBm
    rsrp = np.clip(np.round(rsrp), -160, -20)
    f_to_earfcn = {earfcn_to_freq(e): e for e in EARFCNS}
    geo = [pts[i] for i in feats["point_index"]]
    return pd.DataFrame(
        {
            "lat": [g.lat for g in geo],
            "lon": [g.lon for g in geo],
            "rsrp_dbm": rsrp,
            "earfcn": [f_to_earfcn[f] for f in feats["freq_hz"]],
            "cell_id": [f"{bs.id}-1" for _ in geo],
            "bs_id": bs.id,
            "env": env,
            "timestamp": np.arange(len(geo), dtype=float),
        }
    )


def registry_frame(envs=tuple(ENVS)) -> pd.DataFrame:
    rows = []
    for env in envs:
        bs = site_of(env)
        rows.append(
            {
                "bs_id": bs.id,
                "lat": bs.location.lat,
                "lon": bs.location.lon,
                "tower_height_agl_m": bs.tower_height_agl,
                "vbw_deg": bs.vbw_deg,
                "sector_azimuths": "",
                "carriers_hz": ";".join(f"{c:.0f}" for c in bs.carriers),
                "env": env,
            }
        )
    return pd.DataFrame(rows)


@dataclass
class ToyWorldFiles:
    directory: str
    manifest: str


def write_toy_world(directory) -> ToyWorldFiles:
    """Generate the rasters, registry, measurements and a run manifest."""
    os.makedirs(directory, exist_ok=True)
    meas = []
    lines = [
        "# toy world run manifest",
        "measurements=measurements.csv",
        "bs_registry=bs_registry.csv",
        "seed=7",
        "rsrp_threshold_dbm=-80",
        "n_min=10",
        "vbw_default_deg=7",
        "rx_height_m=1.5",
        "sim_model=FSPL",
        "sim_tilt_deg=6",
    ]
    for env in ENVS:
        t = make_terrain(env)
        write_ascii_grid(t.dsm, os.path.join(directory, f"{env}_dsm.asc"), "%.2f")
        write_ascii_grid(t.dhm, os.path.join(directory, f"{env}_dhm.asc"), "%.2f")
        meas.append(measurements(env, t))
        o = ENVS[env]["origin"]
        xmin, ymin, xmax, ymax = t.dsm.extent
        lines += [
            f"env.{env}.dsm={env}_dsm.asc",
            f"env.{env}.dhm={env}_dhm.asc",
            f"env.{env}.units=meters",
            f"env.{env}.origin_lat={o.lat}",
            f"env.{env}.origin_lon={o.lon}",
            f"env.{env}.sim_spacing={SIM_SPACING:g}",
            f"env.{env}.sim_bbox={xmin + CELL:g},{ymin + CELL:g},{xmax - CELL:g},{ymax - CELL:g}",
        ]
    pd.concat(meas, ignore_index=True).to_csv(
        os.path.join(directory, "measurements.csv"), index=False, float_format="%.10g"
    )
    registry_frame().to_csv(os.path.join(directory, "bs_registry.csv"), index=False)
    manifest = os.path.join(directory, "toyworld.cfg")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return ToyWorldFiles(directory, manifest)


def bundled_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "toyworld")


def bundled_manifest() -> str:
    return os.path.join(bundled_dir(), "toyworld.cfg")


def labelled_tables(env: str, terrain: Optional[TerrainDataset] = None, spacing: float = SIM_SPACING):
    """(real, synthetic) feature tables with targets for one environment."""
    terrain = terrain or make_terrain(env)
    bs = site_of(env)
    meas = measurements(env, terrain)
    meas.insert(0, "record_id", [f"{env}-m{i:05d}" for i in range(len(meas))])
    links = ingest_measurements(meas, bs, terrain)
    real, base = label_measurements(links, bs, env)
    xmin, ymin, xmax, ymax = terrain.dsm.extent
    cfg = SimConfig(
        env,
        (LocalXY(xmin + CELL, ymin + CELL), LocalXY(xmax - CELL, ymax - CELL)),
        spacing,
        (bs.id,),
        bs.carriers,
    )
    synth = simulate_links(cfg, {bs.id: bs}, terrain, {bs.id: base})
    return real, synth, base
