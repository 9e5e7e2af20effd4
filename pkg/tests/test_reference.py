import math
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from planted import planted_site
from pathloss.empirical import CONSENSUS_MODELS, EmpiricalModelId
from pathloss.exceptions import (
    BaselineMismatch,
    DataError,
    InsufficientReferencePoints,
    UnknownEarfcn,
    UnknownModelBaseline,
)
from pathloss.features import BaseStation
from pathloss.geodesy import GeoPoint
from pathloss.reference import (
    SiteBaseline,
    assign_sectors,
    baseline_report,
    baselines_from_report,
    compute_baselines,
    delta_rsrp_model,
    delta_rsrp_real,
    earfcn_band,
    earfcn_to_freq,
    estimate_downtilt,
    exact_delta_rsrp_real,
    mainlobe_subset,
    pl_column,
    read_measurements,
    read_registry,
    select_downtilt,
    select_los_candidates,
    site_baseline,
)
from pathloss.toyworld import PATTERN_VBW_DEG

FSPL = EmpiricalModelId.FSPL


@pytest.mark.parametrize(
    "earfcn,band,mhz",
    [(600, 2, 1930.0), (900, 2, 1960.0), (2175, 4, 2132.5), (2400, 5, 869.0), (5230, 13, 751.0), (66436, 66, 2110.0), (68661, 71, 624.5)],
)
def test_earfcn(earfcn, band, mhz):
    assert earfcn_band(earfcn) == band
    assert earfcn_to_freq(earfcn) == mhz * 1e6


def test_unknown_earfcn():
    with pytest.raises(UnknownEarfcn):
        earfcn_to_freq(99999)


def _cands(rsrp, los, alpha=None):
    n = len(rsrp)
    return pd.DataFrame({"rsrp_dbm": rsrp, "is_los": los, "alpha_deg": alpha if alpha is not None else np.zeros(n)})


def test_los_candidates_threshold_inclusive():
    df = _cands([-79.0, -80.0, -81.0, -60.0], [1, 1, 1, 0])
    assert list(select_los_candidates(df).index) == [0, 1]
    assert select_los_candidates(_cands([-50.0, -60.0], [0, 0])).empty


def test_los_candidates_brute_force():
    rng = np.random.default_rng(0)
    df = _cands(rng.integers(-120, -40, 500).astype(float), rng.integers(0, 2, 500))
    oracle = [i for i, (r, l) in enumerate(zip(df.rsrp_dbm, df.is_los)) if l == 1 and r >= -80]
    assert list(select_los_candidates(df).index) == oracle


def test_mainlobe_window_closed():
    df = _cands([-70.0] * 3, [1] * 3, np.array([1.0, 7.0, 7.1]))
    assert list(mainlobe_subset(df, 4, 6).index) == [0, 1]
    assert len(mainlobe_subset(df, 4, 100)) == 3
    with pytest.raises(ValueError):
        mainlobe_subset(df, 4, 0)


def test_planted_tilt_six():
    est = estimate_downtilt(select_los_candidates(planted_site(6, seed=1)), 7.0)
    assert est.theta_est in (5, 6, 7)
    assert list(est.table["theta_deg"]) == list(range(16))


def test_flat_objective_ties_to_zero():
    # relative RSRP equals relative PL for every model: every tilt has MAE 0
    alpha = np.linspace(-4, 20, 200)
    pl = 100 + 0.3 * alpha
    df = pd.DataFrame({pl_column(m): pl for m in CONSENSUS_MODELS})
    df["rsrp_dbm"] = -pl
    df["alpha_deg"] = alpha
    assert estimate_downtilt(df, 7.0).theta_est == 0


def test_insufficient_reference_points():
    df = planted_site(6, seed=0, n=5)
    with pytest.raises(InsufficientReferencePoints):
        estimate_downtilt(df, 7.0)


def test_select_downtilt_depends_only_on_table():
    table = pd.DataFrame({"theta_deg": range(4), "n": [50, 5, 50, 50], "mae_mean": [3.0, 1.0, 2.0, 2.0]})
    assert select_downtilt(table) == 2  # theta 1 lacks points; 2 and 3 tie
    assert select_downtilt(table, n_min=1) == 1


def _subset(rsrp, pl):
    return pd.DataFrame({"record_id": [f"r{i}" for i in range(len(rsrp))], "rsrp_dbm": rsrp, pl_column(FSPL): pl})


def test_compute_baselines_means():
    s = _subset([-75.0, -77.0, -79.0], [100.0] * 3)
    b = compute_baselines(s, [FSPL], "b", 4, n_min=3)
    assert b.rsrp_ref_dbm == -77.0 and b.pl_ref_db == {"FSPL": 100.0}
    assert b.subset_ids == ["r0", "r1", "r2"] and b.n_ref == 3
    with pytest.raises(InsufficientReferencePoints):
        compute_baselines(s, [FSPL], "b", 4, n_min=10)


def test_compute_baselines_oracle_mean():
    rng = np.random.default_rng(2)
    rsrp, pl = rng.normal(-70, 5, 37), rng.normal(110, 7, 37)
    b = compute_baselines(_subset(rsrp, pl), [FSPL], "b", 0)
    assert b.rsrp_ref == sum(Fraction(x) for x in rsrp) / 37
    assert b.pl_ref["FSPL"] == sum(Fraction(x) for x in pl) / 37
    assert b.rsrp_ref_dbm == pytest.approx(float(np.mean(rsrp)), abs=1e-12)


def _base(rsrp_ref=-77, pl_ref=100):
    return SiteBaseline("b", 4.0, [], Fraction(rsrp_ref), {"FSPL": Fraction(pl_ref)}, 10)


def test_delta_real():
    assert delta_rsrp_real(-90.0, _base()) == -13.0
    assert delta_rsrp_real(-77.0, _base()) == 0.0
    with pytest.raises(BaselineMismatch):
        delta_rsrp_real(-90.0, _base(), bs_id="other")


def test_delta_model():
    assert delta_rsrp_model(100.0, FSPL, _base()) == 0.0
    assert delta_rsrp_model(110.0, "FSPL", _base()) == -10.0
    with pytest.raises(UnknownModelBaseline):
        delta_rsrp_model(110.0, EmpiricalModelId.SUI, _base())


def test_delta_rounds_once():
    ref = Fraction(-43027, 713)
    b = SiteBaseline("b", 0, [], ref, {}, 10)
    vals = np.array([-60.0, -61.0, -47.0])
    got = delta_rsrp_real(vals, b)
    assert got.tolist() == [float(Fraction(v) - ref) for v in vals]


def test_shift_cancels_and_subset_mean_zero():
    rng = np.random.default_rng(4)
    rsrp = rng.integers(-80, -50, 60).astype(float)
    pl = rng.normal(110, 6, 60)
    s = _subset(rsrp, pl)
    b0 = compute_baselines(s, [FSPL], "b", 0)
    d_real = delta_rsrp_real(rsrp, b0)
    d_model = delta_rsrp_model(pl, FSPL, b0)
    for c in (-9.0, 9.0):
        b1 = compute_baselines(_subset(rsrp + c, pl), [FSPL], "b", 0)
        assert delta_rsrp_real(rsrp + c, b1).tobytes() == d_real.tobytes()
    for c in (-5.0, -0.0625):
        assert all(Fraction(v + c) == Fraction(v) + Fraction(c) for v in pl)  # exact shift
        b2 = compute_baselines(_subset(rsrp, pl + c), [FSPL], "b", 0)
        assert delta_rsrp_model(pl + c, FSPL, b2).tobytes() == d_model.tobytes()
    assert sum(exact_delta_rsrp_real(rsrp, b0)) == 0
    assert [float(x) for x in exact_delta_rsrp_real(rsrp, b0)] == d_real.tolist()


def test_sectors_two_stage_average():
    a = planted_site(6, seed=3)
    b = planted_site(6, seed=4)
    # put the two halves in opposite sectors and offset one by 10 dB
    b["rsrp_dbm"] -= 10.0
    a["azimuth_aoa_deg"], b["azimuth_aoa_deg"] = 180.0, 0.0  # bearings 0 and 180
    a["tilt_aoa_deg"], b["tilt_aoa_deg"] = -a["alpha_deg"], -b["alpha_deg"]
    for m in ("SIM",):
        a[pl_column(m)], b[pl_column(m)] = a[pl_column(FSPL)], b[pl_column(FSPL)]
    links = pd.concat([a, b], ignore_index=True).drop(columns="alpha_deg")
    bs = BaseStation("s", GeoPoint(40, -86), 30.0, 7.0, sector_azimuths=(0.0, 180.0))
    base = site_baseline(links, bs)
    assert set(base.sector_thetas) == {0, 1}
    ra = compute_baselines(mainlobe_subset(select_los_candidates(a.assign(alpha_deg=a["alpha_deg"])), base.sector_thetas[0], 7.0), [FSPL], "s", 0)
    rb = compute_baselines(mainlobe_subset(select_los_candidates(b.assign(alpha_deg=b["alpha_deg"])), base.sector_thetas[1], 7.0), [FSPL], "s", 0)
    assert base.rsrp_ref == (ra.rsrp_ref + rb.rsrp_ref) / 2
    assert base.n_ref == ra.n_ref + rb.n_ref
    assert list(assign_sectors(links.iloc[[0, len(a)]], (0.0, 180.0))) == [0, 1]


def test_report_round_trip():
    b = SiteBaseline("b", 6, ["x"], Fraction(-43027, 713), {"FSPL": Fraction(1, 3), "SIM": Fraction(7, 2)}, 713)
    back = baselines_from_report(baseline_report([b]))["b"]
    assert back.rsrp_ref == b.rsrp_ref and back.pl_ref == b.pl_ref and back.n_ref == 713


def test_registry_and_measurements(tmp_path):
    (tmp_path / "reg.csv").write_text(
        "bs_id,lat,lon,tower_height_agl_m,vbw_deg,sector_azimuths,carriers_hz\n"
        "007,40.0,-86.0,30,,0;120;240,1960000000;2132500000\n"
    )
    reg = read_registry(tmp_path / "reg.csv", default_vbw=9.0)
    bs = reg["007"]
    assert bs.vbw_deg == 9.0 and bs.sector_azimuths == (0.0, 120.0, 240.0) and len(bs.carriers) == 2
    (tmp_path / "m.csv").write_text(
        "lat,lon,rsrp_dbm,earfcn,cell_id,bs_id,env,timestamp\n"
        "40.0,-86.0,-70,900,1,007,urban,0\n"
        "40.0,-86.0,-10,900,1,007,urban,1\n"
        "40.0,-86.0,-170,900,1,007,urban,2\n"
    )
    m = read_measurements(tmp_path / "m.csv")
    assert list(m["record_id"]) == ["m0000000"] and m["bs_id"].iloc[0] == "007"
    (tmp_path / "bad.csv").write_text("lat,lon\n1,2\n")
    with pytest.raises(DataError):
        read_measurements(tmp_path / "bad.csv")
    with pytest.raises(DataError):
        read_registry(tmp_path / "bad.csv")


def test_toy_world_labels(toy_tables):
    real, synth, base = toy_tables["rural"]
    sub = real[real["record_id"].isin(base.subset_ids)]
    assert len(sub) == base.n_ref >= 10
    assert base.rsrp_ref == sum(Fraction(x) for x in sub["rsrp_dbm"]) / len(sub)
    assert np.all(sub["is_los"] == 1) and np.all(sub["rsrp_dbm"] >= -80)
    alpha = -sub["tilt_aoa_deg"]
    half = PATTERN_VBW_DEG / 2
    assert alpha.min() >= base.theta_est_deg - half and alpha.max() <= base.theta_est_deg + half
    np.testing.assert_array_equal(real["target_delta_rsrp"], delta_rsrp_real(real["rsrp_dbm"], base))
    assert math.isclose(sub["target_delta_rsrp"].mean(), 0.0, abs_tol=1e-12)
