"""Command line entry point: ``pathloss <command> --config run.cfg [options]``."""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np
import pandas as pd
import sklearn

from . import __version__
from .augment import smote_regression
from .ensemble import content_hash, fit_ensemble, fit_frame, save_ensemble, split_train_val
from .evaluation import (
    MatrixMode,
    Scenario,
    ScenarioSettings,
    cross_env_matrix,
    heatmap,
    result_table,
    run_scenario,
    scarcity_sample,
    split_dataset,
)
from .exceptions import ConfigError, DataError, PathlossError
from .features import featurize_links, write_feature_table
from .geodesy import GeoPoint
from .learner import serialize
from .pipeline import Pipeline, RunManifest
from .reference import baseline_report, earfcn_to_freq
from .toyworld import write_toy_world

COMMANDS = ("ingest", "baseline", "features", "simulate", "augment", "train", "ensemble", "evaluate", "matrix")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pathloss", description="Terrain-aware path loss prediction pipeline.")
    p.add_argument("--version", action="version", version=f"pathloss {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_text, env=False, split=False):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True, help="key=value run manifest")
        sp.add_argument("--out", help="output directory (default: manifest 'out' key, else ./out)")
        sp.add_argument("--seed", type=int, help="overrides PATHLOSS_SEED and the manifest seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
        if env:
            sp.add_argument("--env", help="environment name (default: every environment in the manifest)")
        if split:
            sp.add_argument(
                "--split-block-m",
                type=float,
                help="spatial-block test/train split with this block size in metres (default: random split)",
            )
        return sp

    add("ingest", "Featurize the measurement records.", env=True)
    add("baseline", "Estimate downtilts and site baselines; label the measurements.", env=True)
    sp = add("features", "Feature vectors for arbitrary receiver points.", env=True)
    sp.add_argument("--points", required=True, help="CSV with lat, lon, bs_id and earfcn or freq_hz")
    add("simulate", "Generate the synthetic grid data set.", env=True)
    sp = add("augment", "SMOTE samples from the scarce real training subset.", env=True, split=True)
    sp.add_argument("--fraction", type=float, help="share of the training half to keep (default: manifest)")
    sp = add("train", "Train one boosted model.", env=True, split=True)
    sp.add_argument("--source", choices=("real", "synthetic", "combined"), default="real", help="training data (default: real)")
    add("ensemble", "Train the weighted real/synthetic/combined ensemble.", env=True, split=True)
    sp = add("evaluate", "Run one data-scarcity scenario against a held-out test half.", split=True)
    sp.add_argument("--scenario", required=True, choices=[s.value for s in Scenario], help="scenario name")
    sp.add_argument("--test-env", required=True, help="environment whose held-out half is scored")
    sp.add_argument("--train-env", help="environment of the real training data (default: test env)")
    sp = add("matrix", "Cross-environment train/test matrix.", split=True)
    sp.add_argument("--mode", choices=[m.value for m in MatrixMode], default="ensemble", help="real_only or ensemble (default: ensemble)")
    sp.add_argument("--envs", help="comma-separated environments (default: all)")

    sp = sub.add_parser("toyworld", help="Write the generated toy world data set.")
    sp.add_argument("--out", required=True, help="directory to write into")
    return p


def _envs(args, pipe: Pipeline) -> List[str]:
    if getattr(args, "env", None):
        if args.env not in pipe.manifest.envs:
            raise ConfigError(f"environment {args.env!r} is not defined in the manifest")
        return [args.env]
    return pipe.manifest.env_names


def _settings(args, pipe: Pipeline, seed) -> ScenarioSettings:
    settings = pipe.manifest.settings(seed)
    if getattr(args, "split_block_m", None) is not None:
        if args.split_block_m <= 0:
            raise ConfigError("--split-block-m must be positive")
        settings = replace(settings, split_block_m=args.split_block_m)
    return settings


def _pool(pipe: Pipeline, env, seed, settings: ScenarioSettings) -> pd.DataFrame:
    return split_dataset(pipe.real(env)[0], seed, block_m=settings.split_block_m)[1]


def _write(df: pd.DataFrame, path):
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def cmd_ingest(args, pipe, out, seed):
    files = []
    for env in _envs(args, pipe):
        path = os.path.join(out, f"features_real_{env}.csv")
        write_feature_table(pipe.ingest(env), path)
        files.append(path)
    return files


def cmd_baseline(args, pipe, out, seed):
    files, reports, tables = [], [], []
    for env in _envs(args, pipe):
        labelled, bases = pipe.real(env)
        path = os.path.join(out, f"labelled_real_{env}.csv")
        write_feature_table(labelled, path)
        files.append(path)
        rep = baseline_report(bases.values())
        rep.insert(1, "env", env)
        reports.append(rep)
        for b in bases.values():
            if b.mae_table is not None:
                tables.append(b.mae_table.assign(bs_id=b.bs_id, env=env))
    _write(pd.concat(reports, ignore_index=True), os.path.join(out, "baselines.csv"))
    files.append(os.path.join(out, "baselines.csv"))
    if tables:
        t = pd.concat(tables, ignore_index=True)
        lead = ["env", "bs_id", "theta_deg", "n"]
        _write(t[lead + [c for c in t.columns if c not in lead]], os.path.join(out, "downtilt_mae.csv"))
        files.append(os.path.join(out, "downtilt_mae.csv"))
    return files


def cmd_features(args, pipe, out, seed):
    pts = pd.read_csv(args.points, dtype={"bs_id": str})
    if "freq_hz" not in pts.columns:
        if "earfcn" not in pts.columns:
            raise DataError("points file needs an earfcn or freq_hz column")
        pts["freq_hz"] = [earfcn_to_freq(e) for e in pts["earfcn"]]
    pts["earfcn"] = pts.get("earfcn", -1)
    pts["rsrp_dbm"] = pts.get("rsrp_dbm", np.nan)
    pts["record_id"] = pts.get("record_id", pd.Series([f"p{i:07d}" for i in range(len(pts))]))
    env = _envs(args, pipe)[0]
    pts["env"] = env
    frames = []
    reg = pipe.registry()
    for bs_id, grp in pts.groupby("bs_id", sort=True):
        if bs_id not in reg:
            raise DataError(f"base station {bs_id!r} is not in the registry")
        frames.append(_features_for(grp, reg[bs_id], pipe, env))
    df = pd.concat(frames, ignore_index=True)
    df["source_tag"] = "query"
    path = os.path.join(out, f"features_{env}.csv")
    write_feature_table(df, path)
    return [path]


def _features_for(points, bs, pipe, env):
    geo = [GeoPoint(float(a), float(b)) for a, b in zip(points["lat"], points["lon"])]
    feats, _ = featurize_links(bs, pipe.terrain(env), geo, [[f] for f in points["freq_hz"]], pipe.rx_height)
    src = points.iloc[feats["point_index"].to_numpy()].reset_index(drop=True)
    feats = feats.drop(columns="point_index")
    for c in ("record_id", "bs_id", "env", "lat", "lon"):
        feats[c] = src[c].to_numpy()
    feats["target_delta_rsrp"] = np.nan
    return feats


def cmd_simulate(args, pipe, out, seed):
    files = []
    for env in _envs(args, pipe):
        path = os.path.join(out, f"synthetic_{env}.csv")
        write_feature_table(pipe.synthetic(env), path)
        files.append(path)
    return files


def cmd_augment(args, pipe, out, seed):
    settings = _settings(args, pipe, seed)
    files = []
    for env in _envs(args, pipe):
        pool = _pool(pipe, env, seed, settings)
        real = scarcity_sample(pool, args.fraction or settings.fraction, seed)
        aug = smote_regression(real, settings.smote)
        path = os.path.join(out, f"smote_{env}.csv")
        write_feature_table(aug, path)
        files.append(path)
    return files


def cmd_train(args, pipe, out, seed):
    cfg = pipe.manifest.train_config(seed)
    settings = _settings(args, pipe, seed)
    files = []
    for env in _envs(args, pipe):
        parts = []
        if args.source in ("real", "combined"):
            parts.append(_pool(pipe, env, seed, settings))
        if args.source in ("synthetic", "combined"):
            parts.append(pipe.synthetic(env))
        model = fit_frame(pd.concat(parts, ignore_index=True), cfg)
        path = os.path.join(out, f"model_{args.source}_{env}.txt")
        with open(path, "w") as fh:
            fh.write(serialize(model))
        files.append(path)
    return files


def cmd_ensemble(args, pipe, out, seed):
    settings = _settings(args, pipe, seed)
    files = []
    for env in _envs(args, pipe):
        pool = _pool(pipe, env, seed, settings)
        synth = pipe.synthetic(env)
        rt, rv = split_train_val(pool, settings.val_fraction, seed)
        st, sv = split_train_val(synth, settings.val_fraction, seed)
        model = fit_ensemble(rt, st, rv, sv, settings.train, settings.metric, settings.step, settings.validation)
        hashes = {"real_train": content_hash(rt), "synth_train": content_hash(st)}
        files.append(save_ensemble(model, os.path.join(out, f"ensemble_{env}"), hashes))
    return files


def cmd_evaluate(args, pipe, out, seed):
    envs = sorted({args.test_env, args.train_env or args.test_env})
    for env in envs:
        if env not in pipe.manifest.envs:
            raise ConfigError(f"environment {env!r} is not defined in the manifest")
    data = pipe.experiment_data(envs)
    row = run_scenario(Scenario(args.scenario), args.test_env, data, seed, _settings(args, pipe, seed), args.train_env)
    path = os.path.join(out, "results.csv")
    _write(result_table([row]), path)
    return [path]


def cmd_matrix(args, pipe, out, seed):
    envs = args.envs.split(",") if args.envs else pipe.manifest.env_names
    for env in envs:
        if env not in pipe.manifest.envs:
            raise ConfigError(f"environment {env!r} is not defined in the manifest")
    data = pipe.experiment_data(envs)
    mat = cross_env_matrix(envs, MatrixMode(args.mode), data, seed, _settings(args, pipe, seed), args.jobs)
    files = [os.path.join(out, f"matrix_{args.mode}.csv")]
    _write(mat, files[0])
    for metric in ("mae_db", "rmse_db"):
        path = os.path.join(out, f"heatmap_{args.mode}_{metric}.csv")
        heatmap(mat, metric).to_csv(path, float_format="%.10g", lineterminator="\n")
        files.append(path)
    return files


HANDLERS = {
    "ingest": cmd_ingest,
    "baseline": cmd_baseline,
    "features": cmd_features,
    "simulate": cmd_simulate,
    "augment": cmd_augment,
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "matrix": cmd_matrix,
}


def _write_metadata(out, args, manifest: RunManifest, seed, files, elapsed):
    lines = [
        f"command={args.command}",
        f"argv={' '.join(sys.argv[1:])}",
        f"pathloss_version={__version__}",
        f"python_version={platform.python_version()}",
        f"numpy_version={np.__version__}",
        f"pandas_version={pd.__version__}",
        f"sklearn_version={sklearn.__version__}",
        f"manifest={manifest.path}",
        f"config_sha256={manifest.text_hash}",
        f"seed={seed}",
        f"elapsed_s={elapsed:.3f}",
    ]
    lines += [f"output={os.path.relpath(f, out)}" for f in files]
    with open(os.path.join(out, f"run_metadata_{args.command}.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise ConfigError("a command is required (see --help)")
    if args.command == "toyworld":
        write_toy_world(args.out)
        return 0
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    manifest = RunManifest.load(args.config)
    seed = manifest.seed(args.seed)
    out = args.out or manifest.resolve(manifest.get("out", "out"))
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    files = HANDLERS[args.command](args, Pipeline(manifest), out, seed)
    _write_metadata(out, args, manifest, seed, files, time.perf_counter() - t0)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except PathlossError as exc:
        err = exc
    except (ValueError, KeyError) as exc:
        err = ConfigError(str(exc))
    except OSError as exc:
        err = DataError(str(exc))
    print(f"error: {type(err).__name__}: {str(err).splitlines()[0] if str(err) else ''}", file=sys.stderr)
    return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
