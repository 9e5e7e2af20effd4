"""Engineered per-link features (BS -> measurement point).

Heights follow one convention throughout: ``*_asl`` values are above sea
level, ``*_agl`` above local ground, and ground itself is DSM - DHM.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .diffraction import DEFAULT_MAX_EDGES, deygout_loss
from .exceptions import ComputeError, DataError, DegenerateProfile, ZeroDistance
from .geodesy import GeoPoint, LocalXY, azimuth_aoa, elevation_angle, project
from .raster import Profile, Raster, TerrainDataset, extract_profile, neighborhood_stats

DEFAULT_RX_HEIGHT = 1.5
NEIGHBORHOOD_RADIUS = 50.0


@dataclass(frozen=True)
class BaseStation:
    id: str
    location: GeoPoint
    tower_height_agl: float
    vbw_deg: float = 7.0
    sector_azimuths: Tuple[float, ...] = ()
    carriers: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.tower_height_agl <= 0:
            raise ValueError(f"{self.id}: tower height must be positive")
        if not 0 < self.vbw_deg <= 30:
            raise ValueError(f"{self.id}: vertical beamwidth must be in (0, 30]")
        object.__setattr__(self, "sector_azimuths", tuple(float(a) for a in self.sector_azimuths))
        object.__setattr__(self, "carriers", tuple(float(c) for c in self.carriers))


@dataclass(frozen=True)
class FeatureVector:
    freq_hz: float
    d_bs_m: float
    rel_bs_height_m: float
    avg_clutter_height_m: float
    terrain_roughness_m: float
    tx_haat_m: float
    ratio_alpha: float
    ratio_beta: float
    azimuth_aoa_deg: float
    tilt_aoa_deg: float
    d_diff_first_m: float
    d_diff_last_m: float
    mean_terrain_m: float
    terrain_p25_m: float
    terrain_p50_m: float
    terrain_p75_m: float
    blockage_pct: float
    diffraction_loss_db: float
    is_los: int

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


FEATURE_NAMES: Tuple[str, ...] = tuple(f.name for f in fields(FeatureVector))
ID_COLUMNS = ("record_id", "bs_id", "env", "lat", "lon", "source_tag", "target_delta_rsrp")
TABLE_COLUMNS = ID_COLUMNS + FEATURE_NAMES


class DiffractionPoints(NamedTuple):
    d_first: float
    d_last: float
    any: bool


def _check(profile: Profile):
    if len(profile) < 2:
        raise DegenerateProfile("profile needs at least two samples")


def ray_heights(profile: Profile, tx_h_agl: float, rx_h_agl: float) -> np.ndarray:
    """Height ASL of the straight BS -> RX ray above every profile sample."""
    h0 = profile.ground[0] + tx_h_agl
    h1 = profile.ground[-1] + rx_h_agl
    return h0 + (h1 - h0) * profile.distances / profile.length


def _obstructed(profile, tx_h_agl, rx_h_agl):
    _check(profile)
    ray = ray_heights(profile, tx_h_agl, rx_h_agl)
    return (profile.surface > ray)[1:-1]


def terrain_roughness(profile: Profile) -> float:
    _check(profile)
    p10, p90 = np.percentile(profile.ground, [10, 90])
    return float(p90 - p10)


def terrain_percentiles(profile: Profile) -> dict:
    _check(profile)
    p25, p50, p75 = np.percentile(profile.ground, [25, 50, 75])
    return {"p25": float(p25), "p50": float(p50), "p75": float(p75)}


def blockage_fraction(profile: Profile, tx_h_agl: float, rx_h_agl: float) -> float:
    """Share of interior samples whose surface rises above the direct ray."""
    blocked = _obstructed(profile, tx_h_agl, rx_h_agl)
    if blocked.size == 0:
        raise DegenerateProfile("profile has no interior samples")
    return float(blocked.mean())


def los_classify(profile: Profile, tx_h_agl: float, rx_h_agl: float) -> bool:
    return not bool(np.any(_obstructed(profile, tx_h_agl, rx_h_agl)))


def diffraction_points(profile: Profile, tx_h_agl: float, rx_h_agl: float) -> DiffractionPoints:
    """3-D distances from the BS antenna to the first and last obstructing samples.

    With a clear path both distances equal the path length.
    """
    blocked = np.flatnonzero(_obstructed(profile, tx_h_agl, rx_h_agl)) + 1
    if blocked.size == 0:
        return DiffractionPoints(profile.length, profile.length, False)
    h_bs = profile.ground[0] + tx_h_agl

    def dist(i):
        return math.hypot(profile.distances[i], profile.surface[i] - h_bs)

    return DiffractionPoints(dist(blocked[0]), dist(blocked[-1]), True)


@dataclass
class _SiteContext:
    """Quantities that only depend on the BS, shared across receivers."""

    xy: LocalXY
    ground_asl: float
    antenna_asl: float
    tx_haat: float
    clutter_mean: float


def _site_context(bs: BaseStation, terrain: TerrainDataset) -> _SiteContext:
    xy = project(terrain.origin, bs.location)
    ground = float(terrain.ground.sample(xy.x, xy.y)[0])
    antenna = ground + bs.tower_height_agl
    mean_ground = neighborhood_stats(terrain.ground, xy, NEIGHBORHOOD_RADIUS)["mean"]
    clutter = neighborhood_stats(terrain.dhm, xy, NEIGHBORHOOD_RADIUS)["mean"]
    return _SiteContext(xy, ground, antenna, antenna - mean_ground, clutter)


def link_features(
    bs: BaseStation,
    rx: GeoPoint,
    terrain: TerrainDataset,
    freqs: Sequence[float],
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
    step: Optional[float] = None,
    site: Optional[_SiteContext] = None,
) -> Tuple[List[FeatureVector], Profile]:
    """Feature vectors for one link at several carrier frequencies.

    Everything except the frequency and the diffraction loss is shared, so
    the profile is extracted once.
    """
    site = site or _site_context(bs, terrain)
    rx_xy = project(terrain.origin, rx)
    d_bs = math.hypot(rx_xy.x - site.xy.x, rx_xy.y - site.xy.y)
    if d_bs == 0.0:
        raise ZeroDistance(f"receiver coincides with {bs.id}")
    profile = extract_profile(terrain.dsm, terrain.dhm, site.xy, rx_xy, step)
    ground_rx = float(profile.ground[-1])
    rx_asl = ground_rx + rx_h_agl
    rel_height = site.antenna_asl - rx_asl
    tx_h = site.antenna_asl - profile.ground[0]

    clutter_rx = neighborhood_stats(terrain.dhm, rx_xy, NEIGHBORHOOD_RADIUS)["mean"]
    surface_rx = neighborhood_stats(terrain.dsm, rx_xy, NEIGHBORHOOD_RADIUS)["mean"]
    pct = terrain_percentiles(profile)
    dp = diffraction_points(profile, tx_h, rx_h_agl)
    blockage = blockage_fraction(profile, tx_h, rx_h_agl)
    is_los = not dp.any
    common = dict(
        d_bs_m=d_bs,
        rel_bs_height_m=rel_height,
        avg_clutter_height_m=clutter_rx,
        terrain_roughness_m=terrain_roughness(profile),
        tx_haat_m=site.tx_haat,
        ratio_alpha=(site.antenna_asl - surface_rx) / d_bs,
        ratio_beta=site.clutter_mean / d_bs,
        azimuth_aoa_deg=azimuth_aoa(site.xy, rx_xy),
        tilt_aoa_deg=elevation_angle(d_bs, rx_asl - site.antenna_asl),
        d_diff_first_m=dp.d_first if dp.any else d_bs,
        d_diff_last_m=dp.d_last if dp.any else d_bs,
        mean_terrain_m=float(profile.ground.mean()),
        terrain_p25_m=pct["p25"],
        terrain_p50_m=pct["p50"],
        terrain_p75_m=pct["p75"],
        blockage_pct=blockage,
        is_los=int(is_los),
    )
    out = []
    for f in freqs:
        diff = deygout_loss(profile, f, tx_h, rx_h_agl, DEFAULT_MAX_EDGES)
        out.append(FeatureVector(freq_hz=float(f), diffraction_loss_db=diff.loss_db, **common))
    return out, profile


def compute_features(
    bs: BaseStation,
    rx: GeoPoint,
    dsm: Raster,
    dhm: Raster,
    freq: float,
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
    origin: Optional[GeoPoint] = None,
    step: Optional[float] = None,
) -> FeatureVector:
    origin = origin or dsm.origin
    if origin is None:
        raise ValueError("a projection origin is required (pass origin= or set it on the raster)")
    terrain = TerrainDataset(dsm, dhm, origin)
    fv, _ = link_features(bs, rx, terrain, [freq], rx_h_agl, step)
    return fv[0]


def look_down_angle(fv: FeatureVector) -> float:
    """Downward elevation angle from the BS antenna to the receiver, degrees."""
    return -fv.tilt_aoa_deg


def feature_frame(vectors: Iterable[FeatureVector]) -> pd.DataFrame:
    return pd.DataFrame([astuple(v) for v in vectors], columns=list(FEATURE_NAMES))


def write_feature_table(df: pd.DataFrame, path):
    """CSV with the id columns first, then the 19 features in fixed order.

    Extra columns (e.g. ``rsrp_dbm``) are kept after the features.
    """
    missing = [c for c in TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"feature table lacks columns: {missing}")
    extra = [c for c in df.columns if c not in TABLE_COLUMNS]
    df[list(TABLE_COLUMNS) + extra].to_csv(path, index=False, float_format="%.10g")


def read_feature_table(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"record_id": str, "bs_id": str, "env": str, "source_tag": str})
    missing = [c for c in TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df


def featurize_links(
    bs: BaseStation,
    terrain: TerrainDataset,
    points: Sequence[GeoPoint],
    freqs: Sequence[Sequence[float]],
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
    step: Optional[float] = None,
    skip_errors: bool = True,
) -> Tuple[pd.DataFrame, List[int]]:
    """Feature rows for many receivers of one BS.

    ``freqs[i]`` lists the carriers evaluated at ``points[i]``. The frame
    carries a ``point_index`` column; with ``skip_errors`` links whose
    geometry cannot be evaluated are dropped and their indices returned.
    """
    site = _site_context(bs, terrain)
    rows, index, dropped = [], [], []
    for i, (p, fs) in enumerate(zip(points, freqs)):
        try:
            vecs, _ = link_features(bs, p, terrain, fs, rx_h_agl, step, site)
        except (DataError, ComputeError):
            if not skip_errors:
                raise
            dropped.append(i)
            continue
        rows.extend(astuple(v) for v in vecs)
        index.extend([i] * len(vecs))
    df = pd.DataFrame(rows, columns=list(FEATURE_NAMES))
    df.insert(0, "point_index", np.array(index, dtype=int))
    return df, dropped
