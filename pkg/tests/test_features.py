import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_terrain
from pathloss.exceptions import DataError, DegenerateProfile
from pathloss.features import (
    FEATURE_NAMES,
    TABLE_COLUMNS,
    BaseStation,
    FeatureVector,
    blockage_fraction,
    compute_features,
    diffraction_points,
    featurize_links,
    los_classify,
    read_feature_table,
    terrain_percentiles,
    terrain_roughness,
    write_feature_table,
)
from pathloss.geodesy import GeoPoint, LocalXY, project, unproject
from pathloss.raster import Profile, Raster, TerrainDataset, neighborhood_stats

O = GeoPoint(40.0, -86.0)
BS_XY = (505.0, 1005.0)


def _bs(origin=O, h=30.0, xy=BS_XY):
    return BaseStation("b1", unproject(LocalXY(*xy, origin)), h)


def _geo(x, y, origin=O):
    return unproject(LocalXY(x, y, origin))


def _profile(ground, surface=None, length=1000.0):
    g = np.asarray(ground, dtype=float)
    s = g if surface is None else np.asarray(surface, dtype=float)
    return Profile(np.linspace(0, length, len(g)), g, s)


def test_flat_world_hand_geometry(flat):
    fv = compute_features(_bs(), _geo(1505.0, 1005.0), flat.dsm, flat.dhm, 1e9)
    assert fv.d_bs_m == pytest.approx(1000.0, abs=1e-6)
    assert fv.rel_bs_height_m == pytest.approx(28.5, abs=1e-9)
    assert fv.terrain_roughness_m == 0.0
    assert fv.blockage_pct == 0.0
    assert fv.is_los == 1
    assert fv.diffraction_loss_db == 0.0
    assert fv.ratio_alpha == pytest.approx(30.0 / 1000.0, abs=1e-9)
    assert fv.d_diff_first_m == fv.d_bs_m and fv.d_diff_last_m == fv.d_bs_m
    assert fv.tx_haat_m == pytest.approx(30.0)
    assert fv.azimuth_aoa_deg == pytest.approx(270.0, abs=1e-6)
    assert fv.tilt_aoa_deg == pytest.approx(math.degrees(math.atan(-28.5 / 1000)), abs=1e-6)


def test_wall_at_midpath():
    t = flat_terrain()
    dsm = t.dsm.values.copy()
    dsm[:, 100] += 50.0  # x in [1000, 1010]
    t = TerrainDataset(t.dsm.with_values(dsm), t.dhm, O)
    fv = compute_features(_bs(), _geo(1505.0, 1005.0), t.dsm, t.dhm, 1e9)
    assert fv.is_los == 0
    assert fv.blockage_pct > 0
    assert fv.d_diff_first_m == pytest.approx(500.0, abs=10.0)
    assert fv.d_diff_last_m == pytest.approx(500.0, abs=10.0)
    assert fv.diffraction_loss_db > 6.0


def test_short_clear_link_sentinel(flat):
    fv = compute_features(_bs(), _geo(555.0, 1005.0), flat.dsm, flat.dhm, 1e9)
    assert fv.is_los == 1
    assert fv.d_diff_first_m == fv.d_bs_m == pytest.approx(50.0)


def test_feature_order():
    assert len(FEATURE_NAMES) == 19
    assert FEATURE_NAMES[0] == "freq_hz" and FEATURE_NAMES[-1] == "is_los"


def test_roughness():
    assert terrain_roughness(_profile(np.full(10, 3.0))) == 0.0
    assert terrain_roughness(_profile(np.linspace(0, 100, 1001))) == pytest.approx(80.0, abs=1.0)
    spike = np.zeros(100)
    spike[40] = 500.0
    assert terrain_roughness(_profile(spike)) == pytest.approx(0.0, abs=1e-9)


def test_percentiles():
    assert terrain_percentiles(_profile(np.full(5, 7.0))) == {"p25": 7.0, "p50": 7.0, "p75": 7.0}
    assert terrain_percentiles(_profile([1, 2, 3, 4, 5]))["p50"] == 3.0
    p = terrain_percentiles(_profile(np.linspace(0, 100, 100001)))
    assert (p["p25"], p["p50"], p["p75"]) == pytest.approx((25, 50, 75), abs=1e-6)


def test_blockage_fraction():
    n = 101
    flat = _profile(np.zeros(n))
    assert blockage_fraction(flat, 10, 10) == 0.0
    assert blockage_fraction(_profile(np.zeros(n), np.full(n, 50.0)), 10, 10) == 1.0
    s = np.zeros(n)
    s[25:75] = 50.0  # middle half of the 99 interior samples
    assert blockage_fraction(_profile(np.zeros(n), s), 10, 10) == pytest.approx(0.5, abs=1 / n)


def test_blockage_degenerate():
    with pytest.raises(DegenerateProfile):
        blockage_fraction(_profile([0.0, 0.0]), 10, 10)


def test_diffraction_points():
    n = 101
    clear = diffraction_points(_profile(np.zeros(n)), 10, 10)
    assert clear == (1000.0, 1000.0, False)
    s = np.zeros(n)
    s[30] = 40.0
    one = diffraction_points(_profile(np.zeros(n), s), 10, 10)
    assert one.any
    assert one.d_first == pytest.approx(math.hypot(300, 30)) and one.d_last == one.d_first
    s[80] = 40.0
    two = diffraction_points(_profile(np.zeros(n), s), 10, 10)
    assert two.d_first == pytest.approx(math.hypot(200 + 100, 30))
    s2 = np.zeros(n)
    s2[20], s2[80] = 40.0, 40.0
    two = diffraction_points(_profile(np.zeros(n), s2), 10, 10)
    assert two.d_first == pytest.approx(math.hypot(200, 30))
    assert two.d_last == pytest.approx(math.hypot(800, 30))


def test_los_boundary_touching_is_los():
    s = np.zeros(11)
    s[5] = 10.0
    assert los_classify(_profile(np.zeros(11), s), 10, 10)
    s[5] = 10.0 + 1e-9
    assert not los_classify(_profile(np.zeros(11), s), 10, 10)
    assert los_classify(_profile(np.zeros(11)), 10, 10)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0, 40), min_size=3, max_size=40), st.floats(1, 40), st.floats(1, 10))
def test_los_consistency(surface, tx, rx):
    p = _profile(np.zeros(len(surface)), surface)
    los = los_classify(p, tx, rx)
    assert los == (blockage_fraction(p, tx, rx) == 0.0)
    assert los == (not diffraction_points(p, tx, rx).any)


def _random_terrain(origin, seed=5):
    rng = np.random.default_rng(seed)
    ground = 100 + np.cumsum(rng.normal(0, 0.5, (150, 150)), axis=1)
    dhm = np.where(rng.random((150, 150)) < 0.2, rng.uniform(3, 15, (150, 150)), 0.0)
    return TerrainDataset(Raster(ground + dhm, 0, 0, 10.0, origin=origin), Raster(dhm, 0, 0, 10.0, origin=origin), origin)


def test_ratios_recomputed_from_rasters():
    t = _random_terrain(O)
    bs = _bs(xy=(705.0, 705.0))
    rng = np.random.default_rng(1)
    for _ in range(10):
        x, y = rng.uniform(100, 1400, 2)
        fv = compute_features(bs, _geo(x, y), t.dsm, t.dhm, 2.1e9)
        bs_xy = project(O, bs.location)
        antenna = t.ground.sample(bs_xy.x, bs_xy.y)[0] + bs.tower_height_agl
        d = math.hypot(x - bs_xy.x, y - bs_xy.y)
        # independent disk means over cell centres within 50 m
        xs = (np.arange(150) + 0.5) * 10.0

        def disk(vals, cx, cy):
            m = (xs[None, :] - cx) ** 2 + (xs[:, None] - cy) ** 2 <= 2500.0
            return vals[m].mean()

        alpha = (antenna - disk(t.dsm.values, x, y)) / d
        beta = disk(t.dhm.values, bs_xy.x, bs_xy.y) / d
        assert fv.ratio_alpha == pytest.approx(alpha, abs=1e-9)
        assert fv.ratio_beta == pytest.approx(beta, abs=1e-9)
        assert fv.terrain_p25_m <= fv.terrain_p50_m <= fv.terrain_p75_m
        assert 0.0 <= fv.blockage_pct <= 1.0
        if fv.is_los:
            assert fv.blockage_pct == 0.0 and fv.d_diff_first_m == fv.d_bs_m


def test_translation_invariance():
    o2 = GeoPoint(40.3, -85.6)
    t1, t2 = _random_terrain(O), _random_terrain(o2)
    # off-lattice site: no cell centre sits exactly on the 50 m disk boundary
    bs1, bs2 = _bs(O, xy=(703.3, 707.9)), _bs(o2, xy=(703.3, 707.9))
    for x, y in [(200.0, 300.0), (1300.0, 900.0), (705.0, 1400.0)]:
        a = compute_features(bs1, _geo(x, y, O), t1.dsm, t1.dhm, 1.96e9).as_array()
        b = compute_features(bs2, _geo(x, y, o2), t2.dsm, t2.dhm, 1.96e9).as_array()
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def test_featurize_links_drops_bad_points(flat):
    pts = [_geo(1500.0, 1005.0), _geo(505.0, 1005.0), _geo(500.0, 500.0)]
    df, dropped = featurize_links(_bs(), flat, pts, [[1e9, 2e9]] * 3)
    assert dropped == [1]
    assert list(df["point_index"]) == [0, 0, 2, 2]
    assert list(df.columns[1:]) == list(FEATURE_NAMES)
    with pytest.raises(DataError):
        featurize_links(_bs(), flat, pts, [[1e9]] * 3, skip_errors=False)


def test_feature_table_round_trip(tmp_path, flat):
    df, _ = featurize_links(_bs(), flat, [_geo(1500.0, 1005.0)], [[1e9]])
    df = df.drop(columns="point_index")
    for c, v in [("record_id", "r1"), ("bs_id", "b1"), ("env", "e"), ("lat", 40.0), ("lon", -86.0), ("source_tag", "real"), ("target_delta_rsrp", 1.5)]:
        df[c] = v
    write_feature_table(df, tmp_path / "f.csv")
    back = read_feature_table(tmp_path / "f.csv")
    assert list(back.columns) == list(TABLE_COLUMNS)
    assert back["d_bs_m"].iloc[0] == pytest.approx(df["d_bs_m"].iloc[0], rel=1e-9)
    pd.DataFrame({"a": [1]}).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(DataError):
        read_feature_table(tmp_path / "bad.csv")


def test_base_station_validation():
    with pytest.raises(ValueError):
        BaseStation("x", O, 0.0)
    with pytest.raises(ValueError):
        BaseStation("x", O, 30.0, vbw_deg=45.0)


def test_feature_vector_array():
    fv = FeatureVector(*range(19))
    assert fv.as_array().tolist() == list(map(float, range(19)))


def test_site_neighbourhood_uses_bs_disk(flat):
    s = neighborhood_stats(flat.dhm, LocalXY(*BS_XY), 50.0)
    assert s["mean"] == 0.0
