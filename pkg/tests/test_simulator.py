import math

import numpy as np
import pytest

from conftest import ORIGIN, flat_terrain
from pathloss.diffraction import deygout_loss
from pathloss.empirical import fspl
from pathloss.exceptions import ConfigError, EmptyGrid, OutOfExtent
from pathloss.features import BaseStation, write_feature_table
from pathloss.geodesy import GeoPoint, LocalXY, project, unproject
from pathloss.raster import Raster, TerrainDataset, extract_profile
from pathloss.reference import SIM_MODEL_KEY, pl_column
from pathloss.simulator import SimConfig, generate_grid, simulate_links, simulated_baseline

BS = BaseStation("b1", unproject(LocalXY(1005.0, 1005.0, ORIGIN)), 30.0, 7.0, carriers=(1.96e9,))
REG = {"b1": BS}


def _cfg(lo=(105.0, 105.0), hi=(1905.0, 1905.0), spacing=100.0, freqs=(1.96e9,), **kw):
    return SimConfig("flat", (LocalXY(*lo), LocalXY(*hi)), spacing, ("b1",), freqs, **kw)


def test_grid_arithmetic(flat):
    assert len(generate_grid(_cfg((0, 0), (100, 100), 10.0), flat)) == 121


def test_grid_spacing_larger_than_box(flat):
    g = generate_grid(_cfg((0, 0), (100, 100), 500.0), flat)
    assert len(g) == 1 and (g[0].xy.x, g[0].xy.y) == (0.0, 0.0)


def test_grid_nodata_hole():
    t = flat_terrain()
    dsm = t.dsm.values.copy()
    dsm[10:20, 10:20] = np.nan  # covers x, y in [100, 200)
    holed = TerrainDataset(t.dsm.with_values(dsm), t.dhm, ORIGIN)
    full = generate_grid(_cfg((0, 0), (300, 300), 10.0), t)
    kept = generate_grid(_cfg((0, 0), (300, 300), 10.0), holed)
    inside = [p for p in full if 100 <= p.xy.x < 200 and 100 <= p.xy.y < 200]
    assert len(full) - len(kept) == len(inside) == 100
    assert {p.index for p in kept} == {p.index for p in full} - {p.index for p in inside}


def test_grid_errors(flat):
    with pytest.raises(OutOfExtent):
        generate_grid(_cfg((-10, 0), (100, 100), 10.0), flat)
    t = flat_terrain(size=5)
    allnan = TerrainDataset(t.dsm.with_values(np.full((5, 5), np.nan)), t.dhm, ORIGIN)
    with pytest.raises(EmptyGrid):
        generate_grid(_cfg((0, 0), (40, 40), 10.0), allnan)
    with pytest.raises(ConfigError):
        _cfg(spacing=0.0)
    with pytest.raises(ConfigError):
        _cfg((10, 10), (10, 50))
    with pytest.raises(ConfigError):
        _cfg(freqs=())


def test_count_order_and_tags(flat):
    cfg = _cfg(freqs=(2.1e9, 1.96e9))
    df = simulate_links(cfg, REG, flat)
    n_grid = len(generate_grid(cfg, flat)) - 1  # the site's own cell is dropped
    assert len(df) == n_grid * 2
    assert list(df["freq_hz"].iloc[[0, -1]]) == [1.96e9, 2.1e9]
    assert df.groupby("freq_hz")["grid_index"].apply(lambda s: s.is_monotonic_increasing).all()
    assert set(df["source_tag"]) == {"synthetic"}
    assert df["record_id"].is_unique
    with pytest.raises(ConfigError):
        simulate_links(SimConfig("flat", cfg.bbox, 100.0, ("nope",), (1e9,)), REG, flat)


def test_flat_world_fspl_slope(flat):
    df = simulate_links(_cfg(), REG, flat)
    d3d = np.hypot(df["d_bs_m"], df["rel_bs_height_m"]).to_numpy()
    t = df["target_delta_rsrp"].to_numpy()
    i, j = int(np.argmin(d3d)), int(np.argmax(d3d))
    assert t[i] - t[j] == pytest.approx(20 * math.log10(d3d[j] / d3d[i]), abs=1e-9)
    # one distance doubling costs 6.02 dB
    assert 20 * math.log10(2) == pytest.approx(6.02, abs=0.005)
    assert df["diffraction_loss_db"].max() == 0.0


def test_reference_subset_centres_target(flat):
    df = simulate_links(_cfg(spacing=50.0), REG, flat)
    alpha = -df["tilt_aoa_deg"]
    sub = df[(df["is_los"] == 1) & (alpha >= 2.5) & (alpha <= 9.5)]
    assert len(sub) >= 10
    assert sub["target_delta_rsrp"].mean() == pytest.approx(0.0, abs=1e-9)


def test_obstructed_twin(flat):
    dsm = flat.dsm.values.copy()
    dsm[:, 140] += 60.0  # a wall at x in [1400, 1410]
    walled = TerrainDataset(flat.dsm.with_values(dsm), flat.dhm, ORIGIN)
    clear = simulate_links(_cfg(), REG, flat)
    base = {"b1": _baseline_of(clear)}
    a = simulate_links(_cfg(), REG, flat, base).set_index("record_id")
    b = simulate_links(_cfg(), REG, walled, base).set_index("record_id")
    hidden = b.index[(b["is_los"] == 0)]
    assert len(hidden) > 0
    diff = a.loc[hidden, "target_delta_rsrp"] - b.loc[hidden, "target_delta_rsrp"]
    np.testing.assert_allclose(diff, b.loc[hidden, "diffraction_loss_db"], atol=1e-9)


def _baseline_of(df):
    return simulated_baseline(df, BS)


def test_oracle_replay(flat):
    rng = np.random.default_rng(0)
    dsm = flat.dsm.values + np.where(rng.random(flat.dsm.values.shape) < 0.05, 25.0, 0.0)
    t = TerrainDataset(flat.dsm.with_values(dsm), Raster(dsm - 200.0, 0, 0, 10.0, origin=ORIGIN), ORIGIN)
    df = simulate_links(_cfg(spacing=50.0), REG, t)
    base = _baseline_of(df)
    ref = float(base.pl_ref[SIM_MODEL_KEY])
    bs_xy = project(ORIGIN, BS.location)
    for k in rng.choice(len(df), 100, replace=False):
        row = df.iloc[k]
        rx = project(ORIGIN, GeoPoint(row["lat"], row["lon"]))
        prof = extract_profile(t.dsm, t.dhm, bs_xy, rx)
        tx_h = 200.0 + 30.0 - prof.ground[0]
        pl = fspl(row["freq_hz"], math.hypot(row["d_bs_m"], row["rel_bs_height_m"]))
        pl += deygout_loss(prof, row["freq_hz"], tx_h, 1.5).loss_db
        assert row[pl_column(SIM_MODEL_KEY)] == pytest.approx(pl, abs=1e-9)
        assert row["target_delta_rsrp"] == pytest.approx(-pl + ref, abs=1e-9)


def test_deterministic_bytes(flat, tmp_path):
    a = simulate_links(_cfg(), REG, flat)
    b = simulate_links(_cfg(), REG, flat)
    write_feature_table(a, tmp_path / "a.csv")
    write_feature_table(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
