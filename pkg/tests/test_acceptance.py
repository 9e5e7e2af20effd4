"""Acceptance suite: one test and one summary verdict line per criterion."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from acceptance_log import record
from planted import planted_site
from pathloss import evaluation
from pathloss.augment import SmoteConfig, smote_regression
from pathloss.diffraction import fresnel_nu, knife_edge_loss
from pathloss.empirical import CONSENSUS_MODELS, fspl
from pathloss.ensemble import Metric, optimize_weights
from pathloss.evaluation import (
    ExperimentData,
    MatrixMode,
    Scenario,
    ScenarioSettings,
    cross_env_matrix,
    scarcity_sample,
    scenario_table,
    split_dataset,
)
from pathloss.features import FEATURE_NAMES
from pathloss.learner import TrainConfig, deserialize, fit, predict, serialize
from pathloss.reference import (
    compute_baselines,
    delta_rsrp_model,
    delta_rsrp_real,
    estimate_downtilt,
    exact_delta_rsrp_real,
    pl_column,
    select_los_candidates,
    site_baseline,
)
from pathloss.toyworld import site_of

SEEDS = range(5)


@pytest.fixture(scope="module")
def data(toy_tables):
    return ExperimentData({e: v[0] for e, v in toy_tables.items()}, {e: v[1] for e, v in toy_tables.items()})


def test_criterion_1_formula_oracles():
    t0 = time.perf_counter()
    f = fspl(1e9, 1000.0)
    f_ref = 32.45 + 20 * math.log10(1000) + 20 * math.log10(1000 / 1000)
    j = knife_edge_loss(0.0)
    j_ref = 6.9 + 20 * math.log10(math.sqrt((0.0 - 0.1) ** 2 + 1) + 0.0 - 0.1)
    lam = 299792458.0 / 1e9
    nu = fresnel_nu(10.0, 500.0, 500.0, 1e9)
    nu_ref = 10 * math.sqrt(2 * (500 + 500) / (lam * 500 * 500))
    elapsed = time.perf_counter() - t0
    ok = (
        abs(f - 92.44) <= 0.05
        and abs(f - f_ref) < 1e-9
        and abs(j - 6.03) <= 0.02
        and abs(j - j_ref) < 1e-9
        and abs(nu - 1.633) <= 0.005
        and abs(nu - nu_ref) < 1e-9
        and elapsed < 1.0
    )
    record(1, "formula oracles", ok, f"FSPL {f:.3f} dB, J(0) {j:.3f} dB, nu {nu:.4f}, {elapsed:.3f} s")
    assert ok


def _exact_shift(values, c):
    return all(Fraction(float(v) + c) == Fraction(float(v)) + Fraction(c) for v in values)


def test_criterion_2_baseline_cancellation(toy_tables):
    t0 = time.perf_counter()
    checks = []
    for env, (real, _, base) in toy_tables.items():
        bs = site_of(env)
        models = list(base.pl_ref)
        subset = real[real["record_id"].isin(base.subset_ids)]
        d_real = delta_rsrp_real(real["rsrp_dbm"], base)
        d_model = {m: delta_rsrp_model(real[pl_column(m)], m, base) for m in models}

        # RSRP offsets: whole-dBm readings shift exactly by any integer
        for c in (-7.0, 7.0):
            assert _exact_shift(real["rsrp_dbm"], c)
            shifted = subset.assign(rsrp_dbm=subset["rsrp_dbm"] + c)
            b = compute_baselines(shifted, models, bs.id, base.theta_est_deg)
            checks.append(delta_rsrp_real(real["rsrp_dbm"] + c, b).tobytes() == d_real.tobytes())
            # the full procedure with the threshold moved by the same offset
            full = site_baseline(real.assign(rsrp_dbm=real["rsrp_dbm"] + c), bs, threshold_dbm=-80 + c)
            checks.append(full.subset_ids == base.subset_ids)
            checks.append(delta_rsrp_real(real["rsrp_dbm"] + c, full).tobytes() == d_real.tobytes())

        # model PL offsets: a downward integer shift is exact for these magnitudes
        c = -3.0
        pl_cols = [pl_column(m) for m in models]
        assert all(_exact_shift(real[col], c) for col in pl_cols)
        moved = real.copy()
        moved[pl_cols] = moved[pl_cols] + c
        full = site_baseline(moved, bs)
        checks.append(full.subset_ids == base.subset_ids)
        for m in models:
            checks.append(delta_rsrp_model(moved[pl_column(m)], m, full).tobytes() == d_model[m].tobytes())

        # exact zero mean of the real target over the reference subset
        checks.append(sum(exact_delta_rsrp_real(subset["rsrp_dbm"], base)) == 0)
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 10.0
    record(2, "baseline cancellation", ok, f"{sum(checks)}/{len(checks)} bit-identity checks, {elapsed:.1f} s")
    assert ok


def test_criterion_3_planted_downtilt():
    t0 = time.perf_counter()
    hits, min_cands = {}, 10**9
    for theta in (2, 6, 12):
        hits[theta] = 0
        for seed in range(10):
            cand = select_los_candidates(planted_site(theta, seed=100 * theta + seed))
            min_cands = min(min_cands, len(cand))
            est = estimate_downtilt(cand, 7.0).theta_est
            hits[theta] += abs(est - theta) <= 1
    elapsed = time.perf_counter() - t0
    ok = min_cands >= 200 and all(h >= 9 for h in hits.values()) and elapsed < 60
    detail = ", ".join(f"theta*={t}: {h}/10" for t, h in hits.items())
    record(3, "planted downtilt recovery", ok, f"{detail}, >= {min_cands} LoS candidates, {elapsed:.1f} s")
    assert ok


def _rescan(preds, truth, metric):
    """Independent brute force over the 0.01 simplex grid; first strict minimum wins."""
    best, arg = None, None
    for i in range(101):
        for j in range(101 - i):
            w = np.array([i, j, 100 - i - j]) / 100.0
            e = w @ preds - truth
            loss = np.mean(np.abs(e)) if metric is Metric.MAE else math.sqrt(np.mean(e * e))
            if best is None or loss < best - 1e-12 * max(1.0, best):
                best, arg = loss, (i, j, 100 - i - j)
    return arg, best


def test_criterion_4_ensemble_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checks = 0
    ok = True
    for _ in range(20):
        n = int(rng.integers(20, 80))
        truth = rng.normal(0, 8, n)
        preds = truth + rng.normal(0, 1, (3, n)) * rng.uniform(1, 6, (3, 1)) + rng.normal(0, 3, (3, 1))
        for metric in Metric:
            w, loss = optimize_weights(preds, truth, metric)
            arg, best = _rescan(preds, truth, metric)
            corners = [np.mean(np.abs(p - truth)) if metric is Metric.MAE else math.sqrt(np.mean((p - truth) ** 2)) for p in preds]
            ok &= tuple(round(x * 100) for x in w) == arg and loss == pytest.approx(best, rel=1e-12)
            ok &= all(loss <= c for c in corners)
            ok &= abs(sum(w) - 1) <= 1e-9 and min(w) >= 0
            checks += 1
    elapsed = time.perf_counter() - t0
    ok = bool(ok) and elapsed < 60
    record(4, "ensemble optimality", ok, f"{checks} triplet x metric cases match the rescan and beat corners, {elapsed:.1f} s")
    assert ok


def test_criterion_5_smote_convexity_and_leakage(data, monkeypatch):
    # convexity: every interpolated coordinate within its two parents
    n_samples, n_off = 0, 0
    for env, table in data.real.items():
        for seed in SEEDS:
            _, pool = split_dataset(table, seed)
            real = scarcity_sample(pool, 0.05, seed)
            aug = smote_regression(real, SmoteConfig(seed=seed))
            by_id = real.set_index("record_id")
            pb = by_id.loc[aug["parent_base"]]
            pn = by_id.loc[aug["parent_neighbor"]]
            for col in list(FEATURE_NAMES) + ["target_delta_rsrp"]:
                v, a, b = aug[col].to_numpy(float), pb[col].to_numpy(float), pn[col].to_numpy(float)
                inside = (v >= np.minimum(a, b)) & (v <= np.maximum(a, b))
                n_off += int((~inside).sum())
            n_samples += len(aug)

    # leakage: spy on every training, augmentation and scoring input
    runs, seen = [], {}

    def ids(df):
        return set(df["record_id"].astype(str))

    def spy(name, fn, extract):
        def wrapped(*args, **kw):
            seen.setdefault(name, []).append(extract(*args, **kw))
            return fn(*args, **kw)

        monkeypatch.setattr(evaluation, name, wrapped)

    spy("fit_frame", evaluation.fit_frame, lambda df, *a, **k: ids(df))
    spy("fit_ensemble", evaluation.fit_ensemble, lambda *a, **k: set().union(*(ids(d) for d in a[:4])))
    spy(
        "smote_regression",
        evaluation.smote_regression,
        lambda df, *a, **k: ids(df),
    )
    spy("_score", evaluation._score, lambda pred, test: ids(test))

    def run(fn):
        seen.clear()
        fn()
        used = set().union(*seen.get("fit_frame", []), *seen.get("fit_ensemble", []), *seen.get("smote_regression", []))
        tests = seen["_score"]
        runs.append(all(t.isdisjoint(used) for t in tests) and all(len(t) > 0 for t in tests))

    settings = ScenarioSettings(train=TrainConfig(n_trees=5, max_depth=2, min_samples_leaf=5), step=0.1)
    for scenario in Scenario:
        for env in data.real:
            for seed in SEEDS:
                run(lambda: evaluation.run_scenario(scenario, env, data, seed, settings))
    for mode in MatrixMode:
        for a in data.real:
            for b in data.real:
                run(lambda: evaluation.matrix_cell(a, b, mode, data, 0, settings))
    ok = n_off == 0 and n_samples > 0 and all(runs)
    record(
        5,
        "SMOTE convexity and leakage",
        ok,
        f"{n_samples - n_off}/{n_samples} samples on parent segments, {sum(runs)}/{len(runs)} runs leak-free",
    )
    assert ok


def test_criterion_6_scenario_ordering(data):
    t0 = time.perf_counter()
    res = scenario_table(list(Scenario), sorted(data.real), list(SEEDS), data, ScenarioSettings())
    med = res.groupby(["test_env", "scenario"])["mae_db"].median().unstack()
    combined, sim, real = med["5pct_real_smote_sim"], med["sim"], med["5pct_real"]
    elapsed = time.perf_counter() - t0
    ok = bool(((combined <= sim) & (combined <= real)).all()) and elapsed < 600
    detail = "; ".join(
        f"{env}: combined {combined[env]:.2f} / SIM {sim[env]:.2f} / 5% Real {real[env]:.2f} dB" for env in med.index
    )
    record(6, "scenario ordering (median MAE)", ok, f"{detail}, {elapsed:.0f} s")
    assert ok


def test_criterion_7_cross_environment(data):
    t0 = time.perf_counter()
    envs = sorted(data.real)
    wins, cells = 0, 0
    for seed in SEEDS:
        ro = cross_env_matrix(envs, MatrixMode.REAL_ONLY, data, seed)
        en = cross_env_matrix(envs, MatrixMode.ENSEMBLE, data, seed)
        off = ro["train_env"] != ro["test_env"]
        wins += int((en.loc[off, "mae_db"].to_numpy() <= ro.loc[off, "mae_db"].to_numpy()).sum())
        cells += int(off.sum())
    elapsed = time.perf_counter() - t0
    ok = wins >= 0.8 * cells and elapsed < 600
    record(7, "cross-environment direction", ok, f"ensemble <= real-only in {wins}/{cells} off-diagonal cells, {elapsed:.0f} s")
    assert ok


def test_criterion_8_learner_sanity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    X = rng.normal(size=(500, 5))
    y = 4 * X[:, 0] + np.sin(3 * X[:, 1]) - X[:, 2] * X[:, 3] + rng.normal(0, 0.3, 500)
    m = fit(X, y, TrainConfig(n_trees=80, max_depth=4, min_samples_leaf=5))
    monotone = bool(np.all(np.diff(m.train_mse) <= 0))

    Xs = rng.uniform(-1, 1, size=(400, 3))
    ys = (Xs[:, 0] > 0).astype(float)
    step = fit(Xs, ys, TrainConfig(n_trees=50, max_depth=1, learning_rate=0.5, min_samples_leaf=1))
    step_mse = float(np.mean((predict(step, Xs) - ys) ** 2))

    Q = rng.normal(size=(1000, 5)) * 2
    back = deserialize(serialize(m))
    exact = np.array_equal(predict(m, Q), predict(back, Q)) and serialize(back) == serialize(m)
    elapsed = time.perf_counter() - t0
    ok = monotone and step_mse < 1e-3 and exact and elapsed < 60
    record(
        8,
        "learner sanity",
        ok,
        f"MSE nonincreasing over {len(m.trees)} trees: {monotone}, step MSE {step_mse:.2e}, round trip exact: {exact}, {elapsed:.1f} s",
    )
    assert ok


def test_consensus_models_are_the_baseline_models(toy_tables):
    # the cancellation check above covers every model with a reference mean
    _, _, base = toy_tables["rural"]
    assert {pl_column(m) for m in CONSENSUS_MODELS} <= {pl_column(m) for m in base.pl_ref}
