"""Per-site reference baselines and the relative-RSRP (delta RSRP) target.

Measured RSRP and modelled path loss are both expressed relative to the mean
over a per-site reference subset: line-of-sight points with strong signal
inside the main lobe of the estimated effective downtilt. Site constants
(transmit power, antenna gains) cancel in the difference.

Reference means are kept as exact rationals. A uniform offset applied to a
site's RSRPs (or to one model's path losses) therefore leaves every delta
bit-identical, provided the offset itself is representable without rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .empirical import CONSENSUS_MODELS, ENVIRONMENTS, EmpiricalModelId, LinkBudgetInput, evaluate
from .exceptions import BaselineMismatch, DataError, InsufficientReferencePoints, UnknownEarfcn, UnknownModelBaseline
from .features import DEFAULT_RX_HEIGHT, BaseStation, featurize_links
from .geodesy import GeoPoint
from .raster import TerrainDataset

RSRP_THRESHOLD_DBM = -80.0
N_MIN = 10
DEFAULT_VBW_DEG = 7.0
TILT_CANDIDATES = tuple(range(0, 16))
SIM_MODEL_KEY = "SIM"

# LTE downlink bands: band -> (F_DL_low MHz, N_Offs_DL, N_DL first, N_DL last)
EARFCN_BANDS = {
    2: (1930.0, 600, 600, 1199),
    4: (2110.0, 1950, 1950, 2399),
    5: (869.0, 2400, 2400, 2649),
    12: (729.0, 5010, 5010, 5179),
    13: (746.0, 5180, 5180, 5279),
    17: (734.0, 5730, 5730, 5849),
    25: (1930.0, 8040, 8040, 8689),
    26: (859.0, 8690, 8690, 9039),
    41: (2496.0, 39650, 39650, 41589),
    66: (2110.0, 66436, 66436, 67335),
    71: (617.0, 68586, 68586, 68935),
}


def earfcn_band(earfcn: int) -> int:
    for band, (_, _, lo, hi) in EARFCN_BANDS.items():
        if lo <= earfcn <= hi:
            return band
    raise UnknownEarfcn(f"EARFCN {earfcn} is not in the supported band table")


def earfcn_to_freq(earfcn: int) -> float:
    """Downlink carrier frequency in Hz."""
    earfcn = int(earfcn)
    f_low, offset, _, _ = EARFCN_BANDS[earfcn_band(earfcn)]
    # integer arithmetic in 100 kHz units keeps the result exact
    return (round(f_low * 10) + (earfcn - offset)) * 1e5


def pl_column(model) -> str:
    return f"pl_{_model_key(model)}"


def _mean(values) -> Fraction:
    vals = [Fraction(float(v)) for v in values]
    return sum(vals, Fraction(0)) / len(vals)


@dataclass
class DowntiltEstimate:
    theta_est: int
    table: pd.DataFrame


@dataclass
class SiteBaseline:
    """Reference means of one base station.

    ``rsrp_ref`` and ``pl_ref`` hold exact rationals; use the ``*_dbm`` /
    ``*_db`` properties for floats.
    """

    bs_id: str
    theta_est_deg: float
    subset_ids: List[str]
    rsrp_ref: Optional[Fraction]
    pl_ref: Dict[str, Fraction]
    n_ref: int
    sector_thetas: Dict[int, int] = field(default_factory=dict)
    mae_table: Optional[pd.DataFrame] = None

    @property
    def rsrp_ref_dbm(self) -> float:
        return float(self.rsrp_ref)

    @property
    def pl_ref_db(self) -> Dict[str, float]:
        return {k: float(v) for k, v in self.pl_ref.items()}


def with_look_down_angle(links: pd.DataFrame) -> pd.DataFrame:
    """Add ``alpha_deg``, the downward look angle from the BS antenna."""
    out = links.copy()
    out["alpha_deg"] = -out["tilt_aoa_deg"]
    return out


def empirical_environment(env: str) -> str:
    """Map a dataset environment label onto an empirical-model environment."""
    return env if env in ENVIRONMENTS else "suburban"


def model_path_losses(
    links: pd.DataFrame,
    bs: BaseStation,
    environment: str = "suburban",
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
    spm_coeffs: Optional[Mapping[str, float]] = None,
    sui_category: Optional[str] = None,
    sim_model: EmpiricalModelId = EmpiricalModelId.FSPL,
    models: Sequence = CONSENSUS_MODELS,
) -> pd.DataFrame:
    """Path loss of each requested model plus the simulator core per link.

    The simulator core is the ``sim_model`` median plus the link's Deygout
    diffraction loss, which is already present as a feature.
    """
    sim_model = EmpiricalModelId(sim_model)
    needed = list(dict.fromkeys([EmpiricalModelId(m) for m in models] + [sim_model]))
    cols = {m: np.empty(len(links)) for m in needed}
    env = empirical_environment(environment)
    for i, row in enumerate(links.itertuples(index=False)):
        inp = LinkBudgetInput(
            freq=row.freq_hz,
            d3d=math.hypot(row.d_bs_m, row.rel_bs_height_m),
            d2d=row.d_bs_m,
            h_bs_agl=bs.tower_height_agl,
            h_ue_agl=rx_h_agl,
            environment=env,
            terrain_category=sui_category,
            is_los=bool(row.is_los),
            diffraction_db=row.diffraction_loss_db,
        )
        for m in needed:
            cols[m][i] = evaluate(m, inp, spm_coeffs).loss_db
    out = pd.DataFrame({pl_column(m): cols[m] for m in models}, index=links.index)
    out[pl_column(SIM_MODEL_KEY)] = cols[sim_model] + links["diffraction_loss_db"].to_numpy()
    return out


def select_los_candidates(links: pd.DataFrame, threshold_dbm: float = RSRP_THRESHOLD_DBM) -> pd.DataFrame:
    return links[(links["is_los"] == 1) & (links["rsrp_dbm"] >= threshold_dbm)]


def mainlobe_subset(candidates: pd.DataFrame, theta: float, vbw: float) -> pd.DataFrame:
    """Rows whose look-down angle lies in the closed window theta +- vbw/2."""
    if vbw <= 0:
        raise ValueError("vertical beamwidth must be positive")
    alpha = candidates["alpha_deg"]
    return candidates[(alpha >= theta - vbw / 2.0) & (alpha <= theta + vbw / 2.0)]


def downtilt_mae_table(
    candidates: pd.DataFrame,
    vbw: float,
    models: Sequence = CONSENSUS_MODELS,
    tilts: Iterable[int] = TILT_CANDIDATES,
) -> pd.DataFrame:
    """Per-tilt MAE between measured and modelled relative values."""
    rows = []
    for theta in tilts:
        s = mainlobe_subset(candidates, theta, vbw)
        row = {"theta_deg": theta, "n": len(s)}
        if len(s):
            d_real = s["rsrp_dbm"].to_numpy() - s["rsrp_dbm"].mean()
            maes = []
            for m in models:
                pl = s[pl_column(m)].to_numpy()
                d_model = -pl + pl.mean()
                mae = float(np.mean(np.abs(d_model - d_real)))
                row[f"mae_{EmpiricalModelId(m).value}"] = mae
                maes.append(mae)
            row["mae_mean"] = float(np.mean(maes))
        else:
            row["mae_mean"] = np.nan
        rows.append(row)
    return pd.DataFrame(rows)


def select_downtilt(table: pd.DataFrame, n_min: int = N_MIN) -> int:
    """Argmin of the consensus MAE over tilts with at least ``n_min`` points.

    Ties go to the smaller tilt.
    """
    ok = table[(table["n"] >= n_min) & table["mae_mean"].notna()]
    if ok.empty:
        raise InsufficientReferencePoints(f"no candidate tilt has {n_min} or more reference points")
    best = ok["mae_mean"].min()
    return int(ok.loc[ok["mae_mean"] == best, "theta_deg"].min())


def estimate_downtilt(
    candidates: pd.DataFrame,
    vbw: float = DEFAULT_VBW_DEG,
    models: Sequence = CONSENSUS_MODELS,
    n_min: int = N_MIN,
    tilts: Iterable[int] = TILT_CANDIDATES,
) -> DowntiltEstimate:
    table = downtilt_mae_table(candidates, vbw, models, tilts)
    return DowntiltEstimate(select_downtilt(table, n_min), table)


def compute_baselines(
    subset: pd.DataFrame,
    models: Iterable = (),
    bs_id: str = "",
    theta: float = float("nan"),
    n_min: int = N_MIN,
) -> SiteBaseline:
    """Mean RSRP and mean path loss per model over a reference subset.

    ``models`` names the ``pl_*`` columns to average; the RSRP reference is
    skipped when the subset carries no ``rsrp_dbm`` column (simulated data).
    """
    if len(subset) < n_min:
        raise InsufficientReferencePoints(f"{bs_id}: {len(subset)} reference points < {n_min}")
    rsrp_ref = _mean(subset["rsrp_dbm"]) if "rsrp_dbm" in subset else None
    pl_ref = {_model_key(m): _mean(subset[pl_column(m)]) for m in models}
    ids = [str(i) for i in subset["record_id"]] if "record_id" in subset else []
    return SiteBaseline(bs_id, theta, ids, rsrp_ref, pl_ref, len(subset))


def _model_key(model) -> str:
    return SIM_MODEL_KEY if model == SIM_MODEL_KEY else EmpiricalModelId(model).value


def assign_sectors(links: pd.DataFrame, sector_azimuths: Sequence[float]) -> np.ndarray:
    """Index of the sector whose boresight is closest to the BS -> RX bearing."""
    bearing = (links["azimuth_aoa_deg"].to_numpy() + 180.0) % 360.0
    az = np.asarray(sector_azimuths, dtype=float)
    diff = np.abs((bearing[:, None] - az[None, :] + 180.0) % 360.0 - 180.0)
    return np.argmin(diff, axis=1)


def site_baseline(
    links: pd.DataFrame,
    bs: BaseStation,
    models: Sequence = CONSENSUS_MODELS,
    extra_models: Sequence = (SIM_MODEL_KEY,),
    threshold_dbm: float = RSRP_THRESHOLD_DBM,
    n_min: int = N_MIN,
    vbw: Optional[float] = None,
) -> SiteBaseline:
    """Full reference procedure for one BS.

    ``links`` must carry features, ``rsrp_dbm`` and the ``pl_*`` columns. With
    sector azimuths the downtilt and subset means are formed per sector and
    the sector means are averaged; sectors that cannot reach ``n_min``
    reference points are dropped.
    """
    vbw = vbw or bs.vbw_deg or DEFAULT_VBW_DEG
    links = with_look_down_angle(links)
    cand = select_los_candidates(links, threshold_dbm)
    all_models = list(models) + [m for m in extra_models if m not in models]

    if not bs.sector_azimuths:
        est = estimate_downtilt(cand, vbw, models, n_min)
        subset = mainlobe_subset(cand, est.theta_est, vbw)
        base = compute_baselines(subset, all_models, bs.id, est.theta_est, n_min)
        base.mae_table = est.table
        return base

    sectors = assign_sectors(cand, bs.sector_azimuths)
    parts, thetas, tables = [], {}, []
    for k in range(len(bs.sector_azimuths)):
        c = cand[sectors == k]
        try:
            est = estimate_downtilt(c, vbw, models, n_min)
        except InsufficientReferencePoints:
            continue
        subset = mainlobe_subset(c, est.theta_est, vbw)
        parts.append(compute_baselines(subset, all_models, bs.id, est.theta_est, n_min))
        thetas[k] = est.theta_est
        tables.append(est.table.assign(sector=k))
    if not parts:
        raise InsufficientReferencePoints(f"{bs.id}: no sector has {n_min} reference points")
    n = len(parts)
    rsrp_ref = sum((p.rsrp_ref for p in parts), Fraction(0)) / n
    pl_ref = {key: sum((p.pl_ref[key] for p in parts), Fraction(0)) / n for key in parts[0].pl_ref}
    return SiteBaseline(
        bs.id,
        float(np.mean(list(thetas.values()))),
        [i for p in parts for i in p.subset_ids],
        rsrp_ref,
        pl_ref,
        sum(p.n_ref for p in parts),
        thetas,
        pd.concat(tables, ignore_index=True),
    )


def delta_rsrp_real(rsrp_dbm, baseline: SiteBaseline, bs_id: Optional[str] = None):
    """RSRP minus the site reference. Scalars or arrays."""
    if bs_id is not None and bs_id != baseline.bs_id:
        raise BaselineMismatch(f"record of {bs_id} against baseline of {baseline.bs_id}")
    if baseline.rsrp_ref is None:
        raise BaselineMismatch(f"{baseline.bs_id}: baseline has no measured RSRP reference")
    return _centered(rsrp_dbm, baseline.rsrp_ref, sign=1)


def delta_rsrp_model(pl_db, model, baseline: SiteBaseline):
    """Negated path loss plus the model's reference mean. Scalars or arrays."""
    key = _model_key(model)
    if key not in baseline.pl_ref:
        raise UnknownModelBaseline(f"{baseline.bs_id}: no reference for model {key}")
    return _centered(pl_db, baseline.pl_ref[key], sign=-1)


def exact_delta_rsrp_real(rsrp_dbm, baseline: SiteBaseline) -> List[Fraction]:
    """Unrounded RSRP minus reference, as rationals (their subset mean is exactly 0)."""
    if baseline.rsrp_ref is None:
        raise BaselineMismatch(f"{baseline.bs_id}: baseline has no measured RSRP reference")
    return [Fraction(float(v)) - baseline.rsrp_ref for v in np.asarray(rsrp_dbm, dtype=float).ravel()]


def _centered(values, ref: Fraction, sign: int):
    # exact difference, rounded once
    arr = np.asarray(values, dtype=float)
    flat = [float(sign * (Fraction(float(v)) - ref)) for v in arr.ravel()]
    out = np.array(flat).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def baseline_report(baselines: Iterable[SiteBaseline]) -> pd.DataFrame:
    rows = []
    for b in baselines:
        row = {
            "bs_id": b.bs_id,
            "theta_est_deg": b.theta_est_deg,
            "n_ref": b.n_ref,
            "rsrp_ref_dbm": b.rsrp_ref_dbm if b.rsrp_ref is not None else np.nan,
            "rsrp_ref_exact": str(b.rsrp_ref) if b.rsrp_ref is not None else "",
        }
        for k, v in b.pl_ref.items():
            row[f"pl_ref_{k}"] = float(v)
            row[f"pl_ref_{k}_exact"] = str(v)
        row["sector_thetas"] = ";".join(f"{k}:{v}" for k, v in sorted(b.sector_thetas.items()))
        rows.append(row)
    return pd.DataFrame(rows)


def baselines_from_report(report: pd.DataFrame) -> Dict[str, SiteBaseline]:
    """Inverse of :func:`baseline_report` (exact columns are used)."""
    out = {}
    for _, row in report.iterrows():
        pl_ref = {
            c[len("pl_ref_") : -len("_exact")]: Fraction(str(row[c]))
            for c in report.columns
            if c.startswith("pl_ref_") and c.endswith("_exact")
        }
        exact = row.get("rsrp_ref_exact", "")
        rsrp = Fraction(str(exact)) if isinstance(exact, str) and exact else None
        out[str(row["bs_id"])] = SiteBaseline(
            str(row["bs_id"]), float(row["theta_est_deg"]), [], rsrp, pl_ref, int(row["n_ref"])
        )
    return out


MEASUREMENT_COLUMNS = ("lat", "lon", "rsrp_dbm", "earfcn", "cell_id", "bs_id", "env")
RSRP_SANITY_DBM = (-160.0, -20.0)


def _split_list(value) -> tuple:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ()
    return tuple(float(v) for v in str(value).split(";") if v.strip())


def read_registry(path, default_vbw: float = DEFAULT_VBW_DEG) -> Dict[str, BaseStation]:
    """BS registry CSV -> {bs_id: BaseStation}. An ``env`` column is kept as metadata."""
    df = pd.read_csv(path, dtype={"bs_id": str, "sector_azimuths": str, "carriers_hz": str})
    need = ("bs_id", "lat", "lon", "tower_height_agl_m")
    missing = [c for c in need if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    out = {}
    for row in df.itertuples(index=False):
        vbw = getattr(row, "vbw_deg", default_vbw)
        out[row.bs_id] = BaseStation(
            id=row.bs_id,
            location=GeoPoint(float(row.lat), float(row.lon)),
            tower_height_agl=float(row.tower_height_agl_m),
            vbw_deg=default_vbw if pd.isna(vbw) else float(vbw),
            sector_azimuths=_split_list(getattr(row, "sector_azimuths", None)),
            carriers=_split_list(getattr(row, "carriers_hz", None)),
        )
    return out


def read_measurements(path) -> pd.DataFrame:
    """Measurement CSV with a ``record_id`` column added when absent.

    Rows outside the RSRP sanity window are dropped.
    """
    df = pd.read_csv(path, dtype={"cell_id": str, "bs_id": str, "env": str})
    missing = [c for c in MEASUREMENT_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if "record_id" not in df.columns:
        df.insert(0, "record_id", [f"m{i:07d}" for i in range(len(df))])
    df["record_id"] = df["record_id"].astype(str)
    lo, hi = RSRP_SANITY_DBM
    return df[(df["rsrp_dbm"] >= lo) & (df["rsrp_dbm"] <= hi)].reset_index(drop=True)


def ingest_measurements(
    records: pd.DataFrame,
    bs: BaseStation,
    terrain: TerrainDataset,
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
) -> pd.DataFrame:
    """Feature table (with ``rsrp_dbm``) for the records served by ``bs``.

    Records whose geometry cannot be evaluated are dropped.
    """
    recs = records[records["bs_id"] == bs.id].reset_index(drop=True)
    freqs = [[earfcn_to_freq(e)] for e in recs["earfcn"]]
    pts = [GeoPoint(float(a), float(b)) for a, b in zip(recs["lat"], recs["lon"])]
    feats, _ = featurize_links(bs, terrain, pts, freqs, rx_h_agl)
    src = recs.iloc[feats["point_index"].to_numpy()].reset_index(drop=True)
    feats = feats.drop(columns="point_index")
    for c in ("record_id", "bs_id", "env", "lat", "lon", "rsrp_dbm", "earfcn"):
        feats[c] = src[c].to_numpy()
    feats["source_tag"] = "real"
    feats["target_delta_rsrp"] = np.nan
    return feats


def label_measurements(
    links: pd.DataFrame,
    bs: BaseStation,
    environment: str,
    rx_h_agl: float = DEFAULT_RX_HEIGHT,
    threshold_dbm: float = RSRP_THRESHOLD_DBM,
    n_min: int = N_MIN,
    vbw: Optional[float] = None,
    sim_model: EmpiricalModelId = EmpiricalModelId.FSPL,
    spm_coeffs: Optional[Mapping[str, float]] = None,
) -> Tuple[pd.DataFrame, SiteBaseline]:
    """Attach model path losses, estimate the site baseline and set the real target."""
    pl = model_path_losses(links, bs, environment, rx_h_agl, spm_coeffs, sim_model=sim_model)
    links = pd.concat([links.drop(columns=[c for c in pl.columns if c in links.columns]), pl], axis=1)
    base = site_baseline(links, bs, threshold_dbm=threshold_dbm, n_min=n_min, vbw=vbw)
    links["target_delta_rsrp"] = delta_rsrp_real(links["rsrp_dbm"].to_numpy(), base)
    return links, base
