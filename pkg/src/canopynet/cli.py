"""Command-line pipeline: simulate, splits, train, predict, evaluate, calibrate, filter, grid, match.

Exit status: 0 success, 1 usage error, 2 data error. Relative output paths
are resolved against ``$CANOPYNET_OUT`` when it is set. Every command
writes ``<output>.manifest.json`` next to its main artifact.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import CanopyError, DataError
from .waveform import atomic_write_bytes

log = logging.getLogger("canopynet")

OUT_ENV = "CANOPYNET_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def out_path(p):
    root = os.environ.get(OUT_ENV)
    if root and not os.path.isabs(p):
        p = os.path.join(root, p)
    d = os.path.dirname(os.path.abspath(p))
    os.makedirs(d, exist_ok=True)
    return p


def in_path(p):
    if not os.path.exists(p):
        raise DataError(f"input file not found: {p}")
    return p


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path, text):
    atomic_write_bytes(path, text.encode())


def write_manifest(main_path, command, config, seeds, inputs, outputs, t0):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in outputs},
        "wallclock_s": round(time.time() - t0, 3),
    }
    write_text(main_path + ".manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def parse_sets(items):
    text = ""
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"expected key=value, got {it!r}")
        text += it + "\n"
    return text


def load_config(cls, path, sets):
    text = ""
    if path:
        with open(in_path(path)) as fh:
            text = fh.read()
    text += parse_sets(sets)
    try:
        return cls.from_text(text)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {cls.__name__}: {exc}") from exc


def _policy_args(p):
    g = p.add_argument_group("filter policy")
    g.add_argument("--policy", choices=["adaptive", "absolute", "relative", "none"], default="adaptive")
    g.add_argument("--tau", type=float, help="adaptive threshold factor")
    g.add_argument("--tau-file", help="JSON written by `calibrate`")
    g.add_argument("--epsilon", type=float, default=10.0, help="adaptive offset in metres")
    g.add_argument("--max-std", type=float, help="absolute threshold in metres")
    g.add_argument("--max-cv", type=float, help="relative threshold")
    g.add_argument("--keep-negative", action="store_true", help="disable the negative-height gate")
    g.add_argument("--min-veg", type=float, default=0.70,
                   help="vegetation gate on metadata veg_prob (negative disables)")
    g.add_argument("--data", help="dataset supplying per-id metadata for the gates")


def build_policy(args):
    from .filtergrid import FilterPolicy
    if args.policy == "none":
        return None
    common = dict(drop_negative_heights=not args.keep_negative,
                  min_vegetation_prob=None if args.min_veg < 0 else args.min_veg)
    try:
        if args.policy == "adaptive":
            tau = args.tau
            if args.tau_file:
                with open(in_path(args.tau_file)) as fh:
                    tau = float(json.load(fh)["tau"])
            if tau is None:
                raise UsageError("adaptive policy needs --tau or --tau-file")
            return FilterPolicy.adaptive(tau, args.epsilon, **common)
        if args.policy == "absolute":
            if args.max_std is None:
                raise UsageError("absolute policy needs --max-std")
            return FilterPolicy.absolute(args.max_std, **common)
        if args.max_cv is None:
            raise UsageError("relative policy needs --max-cv")
        return FilterPolicy.relative(args.max_cv, **common)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def metadata_for(table, data_path):
    if not data_path:
        return None
    from .waveform import load_dataset
    ds = load_dataset(in_path(data_path))
    idx = ds.index()
    out = []
    for i in table.id:
        if int(i) not in idx:
            raise DataError(f"prediction id {int(i)} missing from {data_path}")
        out.append(ds.records[idx[int(i)]][0].metadata)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, t0):
    from .synth import SynthConfig, generate_dataset, simulate_track, smooth_track_params
    from .waveform import save_dataset
    cfg = load_config(SynthConfig, args.config, args.set)
    if args.n_bins:
        from dataclasses import replace
        cfg = replace(cfg, n_bins=args.n_bins)
    out = out_path(args.out)
    if args.tracks:
        from .match import blocks_to_datasets
        rng = np.random.default_rng([args.seed, 99])
        blocks, truth = [], []
        for b in range(args.tracks):
            dx = float(rng.uniform(-args.max_dx, args.max_dx))
            dz = float(rng.uniform(-args.max_dz, args.max_dz))
            params = smooth_track_params(args.track_controls, [args.seed, b], noise_sigma=args.track_noise)
            blk, tr = simulate_track(params, (dx, dz), grid_step_m=args.grid_step,
                                     n_bins=args.n_bins or 512, seed=[args.seed, b, 1], block=b)
            blocks.append(blk)
            truth.append((b, tr.offset_dx_m, tr.offset_dz_m))
        shots, ref = blocks_to_datasets(blocks)
        ref_path = out + ".reference"
        save_dataset(shots, out)
        save_dataset(ref, ref_path)
        truth_path = out + ".truth.csv"
        write_text(truth_path, "block,dx_m,dz_m\n" + "".join(f"{b},{dx!r},{dz!r}\n" for b, dx, dz in truth))
        outputs = [out, ref_path, truth_path]
        summary = f"simulated {args.tracks} tracks ({len(shots.records)} shots) -> {out}"
    else:
        ds = generate_dataset(args.n, cfg, args.seed)
        save_dataset(ds, out)
        outputs = [out]
        summary = f"simulated {len(ds.records)} waveforms ({cfg.n_bins} bins) -> {out}"
    write_manifest(out, "simulate", {"synth": cfg.to_text(), "n": args.n, "tracks": args.tracks},
                   {"seed": args.seed}, [], outputs, t0)
    return summary


def cmd_splits(args, t0):
    from .train import make_splits
    from .waveform import load_dataset
    src = in_path(args.data)
    ds = load_dataset(src)
    try:
        plan = make_splits(ds, args.kind, args.k, args.region, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = out_path(args.out)
    write_text(out, plan.to_csv())
    write_manifest(out, "splits", {"kind": args.kind, "k": args.k, "region": args.region},
                   {"seed": args.seed}, [src], [out], t0)
    return f"{plan.kind.value}: {len(plan.folds)} fold(s) over {len(plan.assignments)} ids -> {out}"


def _train_ids(ds, args):
    from .train import SplitPlan
    if not args.splits:
        return ds.ids
    with open(in_path(args.splits)) as fh:
        plan = SplitPlan.from_csv(fh.read())
    fold = args.fold if args.fold is not None else plan.folds[0]
    return plan.train_ids(fold)


def cmd_train(args, t0):
    from .ensemble import write_manifest as write_ensemble
    from .net import NetConfig, save_checkpoint
    from .train import TrainConfig, prepare, train_model
    from .waveform import load_dataset
    net_cfg = load_config(NetConfig, args.net_config, args.net)
    tr_cfg = load_config(TrainConfig, args.train_config, args.train)
    src = in_path(args.data)
    ds = load_dataset(src)
    ids = _train_ids(ds, args)
    out = out_path(args.out)
    base = os.path.dirname(os.path.abspath(out))
    data = prepare(ds, ids, net_cfg.n_bins)
    paths = []
    for m in range(args.members):
        seed = args.seed + m
        log_path = os.path.join(base, f"member{m}.log.csv") if args.log else None
        try:
            ck = train_model(ds, ids, net_cfg, tr_cfg, seed=seed, log_path=log_path, data=data)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        p = os.path.join(base, f"member{m}.ckpt")
        save_checkpoint(ck, p)
        paths.append(p)
        log.info("member %d: best epoch %d, val nll %.4f", m, ck.best_epoch, ck.best_val_loss)
    write_ensemble(out, paths, net_cfg.config_hash())
    write_manifest(out, "train", {"net": net_cfg.to_text(), "train": tr_cfg.to_text(),
                                  "members": args.members, "splits": args.splits, "fold": args.fold},
                   {"member_seeds": [args.seed + m for m in range(args.members)]},
                   [src] + ([args.splits] if args.splits else []), [out] + paths, t0)
    return f"trained {args.members} member(s) on {len(data.y)} waveforms -> {out}"


def cmd_predict(args, t0):
    from .ensemble import load_ensemble, predict_batch, predictions_to_csv
    from .waveform import load_dataset
    model = in_path(args.model)
    src = in_path(args.data)
    ens = load_ensemble(model)
    ds = load_dataset(src)
    if args.ids:
        from .train import SplitPlan
        with open(in_path(args.ids)) as fh:
            plan = SplitPlan.from_csv(fh.read())
        fold = args.fold if args.fold is not None else plan.folds[0]
        ds = ds.subset(plan.test_ids(fold))
    waves = ds.waveforms
    preds, errors = predict_batch(ens, waves, workers=args.workers)
    for i, rid, msg in errors:
        log.warning("record %d skipped: %s", rid, msg)
    out = out_path(args.out)
    write_text(out, predictions_to_csv(waves, preds))
    write_manifest(out, "predict", {"workers": args.workers, "ids": args.ids, "fold": args.fold},
                   {}, [model, src], [out], t0)
    return f"predicted {len(waves) - len(errors)} of {len(waves)} waveforms -> {out}"


def _pairs(pred_path, data_path):
    from .ensemble import read_predictions
    from .evaluation import EvalPair
    from .waveform import load_dataset
    table = read_predictions(in_path(pred_path))
    ds = load_dataset(in_path(data_path))
    idx = ds.index()
    pairs = []
    for i, p in zip(table.id, table.predictions()):
        if int(i) not in idx:
            raise DataError(f"prediction id {int(i)} missing from {data_path}")
        w, t = ds.records[idx[int(i)]]
        pairs.append(EvalPair(int(i), t.value_m, p, dict(w.metadata)))
    return pairs


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def cmd_evaluate(args, t0):
    from dataclasses import asdict
    from .errors import NoBins
    from .evaluation import (calibration_curve, calibration_slope, metrics, recall_error_curve,
                             stratified_residuals)
    from .filtergrid import FilterPolicy
    from .svg import box_plot, line_plot
    pairs = _pairs(args.predictions, args.data)
    out = out_path(args.out)
    stem = os.path.splitext(out)[0]
    rep = metrics(pairs)
    summary = {"metrics": asdict(rep)}
    outputs = [out]

    try:
        bins = calibration_curve(pairs, args.bin_width, args.min_count)
        path = stem + ".calibration.csv"
        write_text(path, _csv(["bin_center_std_m", "mean_pred_std_m", "empirical_rmse_m", "count"],
                              [(b.bin_center_std_m, b.mean_pred_std_m, b.empirical_rmse_m, b.count)
                               for b in bins]))
        svg = stem + ".calibration.svg"
        write_text(svg, line_plot([([b.mean_pred_std_m for b in bins],
                                    [b.empirical_rmse_m for b in bins], "ensemble")],
                                  "Calibration", "predicted std (m)", "empirical RMSE (m)", diagonal=True))
        summary["calibration_slope"] = calibration_slope(bins)
        outputs += [path, svg]
    except NoBins as exc:
        log.warning("calibration skipped: %s", exc)
        summary["calibration_slope"] = None

    curve = recall_error_curve(pairs, FilterPolicy.adaptive(1.0, args.epsilon))
    path = stem + ".recall_error.csv"
    write_text(path, _csv(["recall", "rmse_m", "me_m"], curve))
    svg = stem + ".recall_error.svg"
    write_text(svg, line_plot([([c[0] for c in curve], [c[1] for c in curve], "RMSE"),
                               ([c[0] for c in curve], [c[2] for c in curve], "ME")],
                              "Recall vs error (adaptive)", "recall", "m"))
    outputs += [path, svg]

    edges = [float(e) for e in args.height_bins.split(",")]
    strata = stratified_residuals(pairs, "y_true", edges)
    path = stem + ".strata.csv"
    keys = ("p10", "q1", "median", "q3", "p90", "n")
    write_text(path, _csv(["stratum", *keys], [(k, *(v["residual"][q] for q in keys))
                                               for k, v in strata.items()]))
    svg = stem + ".strata.svg"
    write_text(svg, box_plot({k: v["residual"] for k, v in strata.items()},
                             "Residuals by reference height", "residual (m)"))
    outputs += [path, svg]

    write_text(out, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "evaluate", {"bin_width": args.bin_width, "min_count": args.min_count,
                                     "epsilon": args.epsilon, "height_bins": edges},
                   {}, [args.predictions, args.data], outputs, t0)
    return f"n={rep.n} rmse={rep.rmse_m:.3f} me={rep.me_m:.3f} mae={rep.mae_m:.3f} mape={rep.mape_pct:.1f}% -> {out}"


def cmd_calibrate(args, t0):
    from .ensemble import read_predictions
    from .filtergrid import calibrate_tau
    table = read_predictions(in_path(args.predictions))
    meta = metadata_for(table, args.data)
    from .filtergrid import FilterPolicy
    gates = FilterPolicy.adaptive(math.inf, args.epsilon, drop_negative_heights=not args.keep_negative,
                                  min_vegetation_prob=None if args.min_veg < 0 else args.min_veg)
    tau = calibrate_tau(table.mean_m, table.std_total_m, args.recall, args.epsilon, meta, gates)
    out = out_path(args.out)
    write_text(out, json.dumps({"tau": tau if math.isfinite(tau) else "inf", "epsilon_m": args.epsilon,
                                "target_recall": args.recall, "n": len(table)}, indent=2) + "\n")
    write_manifest(out, "calibrate", {"recall": args.recall, "epsilon": args.epsilon},
                   {}, [args.predictions] + ([args.data] if args.data else []), [out], t0)
    return f"tau={tau!r} for recall {args.recall} over {len(table)} predictions -> {out}"


def cmd_filter(args, t0):
    from .ensemble import PREDICTION_COLUMNS, read_predictions
    from .filtergrid import keep_mask
    policy = build_policy(args)
    src = in_path(args.predictions)
    table = read_predictions(src)
    meta = metadata_for(table, args.data)
    mask = np.ones(len(table), dtype=bool) if policy is None else \
        keep_mask(table.mean_m, table.std_total_m, policy, meta)
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r, k in zip(rows[1:], mask) if k]
    assert tuple(rows[0]) == PREDICTION_COLUMNS
    out = out_path(args.out)
    write_text(out, "".join(",".join(r) + "\n" for r in kept))
    write_manifest(out, "filter", {"policy": repr(policy)}, {}, [src], [out], t0)
    return f"kept {int(mask.sum())} of {len(table)} predictions -> {out}"


def cmd_grid(args, t0):
    from .ensemble import read_predictions
    from .filtergrid import (GridConfig, RasterGrid, ascii_grid, cells_csv, grid_table,
                             latitudinal_profile)
    policy = build_policy(args)
    src = in_path(args.predictions)
    table = read_predictions(src)
    meta = metadata_for(table, args.data)
    lon0, lat0, lon1, lat1 = (float(v) for v in args.bounds.split(","))
    try:
        gc = GridConfig(args.cell_size, lon0, lat0, lon1, lat1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    g = grid_table(table, policy, gc, meta)
    out = out_path(args.out)
    stem = os.path.splitext(out)[0]
    outputs = [out]
    write_text(out, cells_csv(g))
    stats = [s.strip() for s in args.stats.split(",") if s.strip()]
    for s in stats:
        if s not in RasterGrid.STATISTICS:
            raise UsageError(f"unknown statistic {s!r}")
        p = f"{stem}.{s}.asc"
        write_text(p, ascii_grid(g, s))
        outputs.append(p)
    n = int(g.acc[:, 0].sum())
    if n:
        p = stem + ".latitude.csv"
        write_text(p, _csv(["lat_center", "mean_height_m", "max_height_m", "count"],
                           latitudinal_profile(g)))
        outputs.append(p)
    write_manifest(out, "grid", {"policy": repr(policy), "cell_size": args.cell_size,
                                 "bounds": args.bounds, "stats": stats},
                   {}, [src], outputs, t0)
    return f"gridded {n} footprints into {len(g.cells())} cells -> {out}"


def cmd_match(args, t0):
    from .match import accepted_pairs, blocks_from_datasets, gate_results, match_block
    from .waveform import Dataset, save_dataset, load_dataset
    shots = load_dataset(in_path(args.shots))
    ref_path = args.reference or args.shots + ".reference"
    ref = load_dataset(in_path(ref_path))
    try:
        blocks = blocks_from_datasets(shots, ref, max_dx_m=args.max_dx, max_dz_m=args.max_dz,
                                      step_m=args.step)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed track files: {exc}") from exc
    results = [match_block(b) for b in blocks]
    gated = gate_results(results, args.min_shots, args.min_block_corr, args.min_shot_corr)
    kept_blocks = {r.block for r in gated}
    out = out_path(args.out)
    rows = [(r.block, r.offset_dx_m, r.offset_dz_m, r.mean_corr, r.n_shots_used,
             int(r.block in kept_blocks)) for r in results]
    write_text(out, _csv(["block", "dx_m", "dz_m", "mean_corr", "n_shots", "accepted"], rows))
    pairs = accepted_pairs(blocks, gated)
    ds_path = os.path.splitext(out)[0] + ".gated.wfds"
    outputs = [out]
    if pairs:
        save_dataset(Dataset(tuple(pairs), shots.n_bins), ds_path)
        outputs.append(ds_path)
    write_manifest(out, "match", {"max_dx": args.max_dx, "max_dz": args.max_dz, "step": args.step,
                                  "gate": [args.min_shots, args.min_block_corr, args.min_shot_corr]},
                   {}, [args.shots, ref_path], outputs, t0)
    return f"matched {len(results)} blocks, {len(gated)} accepted, {len(pairs)} shots kept -> {out}"


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="canopynet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset or geolocation tracks")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-bins", type=int)
    s.add_argument("--config", help="key=value file of generator settings")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--tracks", type=int, default=0, help="emit N matching tracks instead")
    s.add_argument("--max-dx", type=float, default=40.0)
    s.add_argument("--max-dz", type=float, default=1.0)
    s.add_argument("--grid-step", type=float, default=5.0)
    s.add_argument("--track-noise", type=float, default=0.1)
    s.add_argument("--track-controls", type=int, default=20, help="control points (100 m apart)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("splits", help="write a cross-validation plan")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=["RANDOM_KFOLD", "GEOGRAPHIC_HOLDOUT"], default="RANDOM_KFOLD")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--region")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_splits)

    s = sub.add_parser("train", help="train an ensemble and write its manifest")
    s.add_argument("--data", required=True)
    s.add_argument("--splits", help="plan from `splits`; trains on the fold's complement")
    s.add_argument("--fold", type=int)
    s.add_argument("--members", type=int, default=10)
    s.add_argument("--seed", type=int, default=0, help="member m uses seed + m")
    s.add_argument("--net-config")
    s.add_argument("--net", action="append", metavar="KEY=VALUE")
    s.add_argument("--train-config")
    s.add_argument("--train", action="append", metavar="KEY=VALUE")
    s.add_argument("--log", action="store_true", help="write per-epoch CSV logs")
    s.add_argument("--out", required=True, help="ensemble manifest path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="ensemble predictions as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--ids", help="split plan; predicts the fold's test ids only")
    s.add_argument("--fold", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics, calibration, recall-error and strata")
    s.add_argument("--predictions", required=True)
    s.add_argument("--data", required=True, help="dataset with reference targets")
    s.add_argument("--bin-width", type=float, default=1.0)
    s.add_argument("--min-count", type=int, default=200)
    s.add_argument("--epsilon", type=float, default=10.0)
    s.add_argument("--height-bins", default="0,10,20,30,40,50,60,70,1000")
    s.add_argument("--out", required=True, help="summary JSON path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("calibrate", help="fit the adaptive tau for a target recall")
    s.add_argument("--predictions", required=True)
    s.add_argument("--recall", type=float, default=0.70)
    s.add_argument("--epsilon", type=float, default=10.0)
    s.add_argument("--keep-negative", action="store_true")
    s.add_argument("--min-veg", type=float, default=0.70)
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("filter", help="drop predictions failing a policy")
    s.add_argument("--predictions", required=True)
    _policy_args(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("grid", help="aggregate predictions into a lat/lon raster")
    s.add_argument("--predictions", required=True)
    _policy_args(s)
    s.add_argument("--cell-size", type=float, default=0.5)
    s.add_argument("--bounds", default="-180,-90,180,90", help="lon_min,lat_min,lon_max,lat_max")
    s.add_argument("--stats", default="count,mean_height,max_height,mean_std_total")
    s.add_argument("--out", required=True, help="cells CSV path")
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("match", help="geolocation matching with quality gates")
    s.add_argument("--shots", required=True)
    s.add_argument("--reference", help="default: <shots>.reference")
    s.add_argument("--max-dx", type=float, default=50.0)
    s.add_argument("--max-dz", type=float, default=1.5)
    s.add_argument("--step", type=float, default=5.0)
    s.add_argument("--min-shots", type=int, default=25)
    s.add_argument("--min-block-corr", type=float, default=0.9)
    s.add_argument("--min-shot-corr", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    try:
        print(args.func(args, t0))
    except (UsageError, ValueError) as exc:
        # ValueError here means a parameter value the library rejected
        print(f"canopynet {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except (CanopyError, OSError) as exc:
        kind = "data error" if isinstance(exc, (DataError, OSError)) else "error"
        print(f"canopynet {args.command}: {kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main_exit():
    sys.exit(main())
