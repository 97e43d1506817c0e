"""Command-line entry point: ``vcmos <subcommand> ...``.

Exit codes: 0 success, 2 usage error or missing input, 3 data/validation
error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .alignment import AlignmentVector, assemble_reference, fill_gaps, resize_bilinear, scan_alignment, validate_alignment
from .dataset import (
    DEFAULT_NOISE_SIGMA,
    ClipRecord,
    DegradationScript,
    apply_degradation,
    load_manifest,
    make_source_video,
    resolve_path,
    split_by_source,
    synthetic_mos,
    write_manifest,
)
from .eval import evaluate_model, export_timeline
from .features.matrix import FULL_SELECTION, FeatureMatrix, build_feature_matrix, parse_selection
from .marker import MarkerConfig, render_markers
from .media_io import VideoHeader, read_video, save_video
from .model import VCMRegressor, load_checkpoint, save_checkpoint

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {p}")
    return p


def _marker_config(args) -> MarkerConfig:
    return MarkerConfig(cell_size=args.cell_size, margin=args.margin)


def _lumas(frames):
    return [f.y for f in frames]


# -- subcommands -----------------------------------------------------------------------

def cmd_embed(args):
    header, frames = read_video(_existing(args.src))
    cfg = _marker_config(args)
    cfg.check_frame(header.height, header.width)
    for i, frame in enumerate(frames):
        frame.y = render_markers(frame.y, i, cfg)
    save_video(args.out, header, frames)
    print(f"stamped {len(frames)} frames -> {args.out}")


def cmd_make_source(args):
    cfg = _marker_config(args)
    lumas = make_source_video(args.seed, args.frames, args.width, args.height, cfg)
    save_video(args.out, VideoHeader(args.width, args.height, args.fps, 1), lumas)
    print(f"wrote {args.frames} marked frames -> {args.out}")


def align_clip(degraded_path, source_path, cfg, threads=1):
    _, deg = read_video(_existing(degraded_path))
    src_header, src = read_video(_existing(source_path))
    raw = scan_alignment(_lumas(deg), cfg, marker_shape=(src_header.height, src_header.width), threads=threads)
    alignment = fill_gaps(raw)
    return deg, src_header, src, alignment


def cmd_align(args):
    cfg = _marker_config(args)
    deg, src_header, src, alignment = align_clip(args.degraded, args.src, cfg, args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    alignment.to_csv(out / "alignment.csv")
    save_video(out / "aligned_reference.y4m", src_header, assemble_reference(src, alignment))
    report = validate_alignment(alignment)
    (out / "alignment_report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    print(json.dumps(report.as_dict()))


def _match_dims(degraded, reference):
    h, w = reference[0].shape
    return [resize_bilinear(d, h, w) for d in degraded]


def cmd_features(args):
    columns = parse_selection(args.select)
    alignment = AlignmentVector.from_csv(_existing(args.alignment))
    alignment = fill_gaps(alignment)
    degraded = reference = None
    if args.degraded:
        degraded = _lumas(read_video(_existing(args.degraded))[1])
    if args.reference:
        reference = _lumas(read_video(_existing(args.reference))[1])
    if degraded is not None and reference is not None:
        degraded = _match_dims(degraded, reference)
    if args.adm:
        _existing(args.adm)
    fm = build_feature_matrix(columns, alignment, degraded, reference, args.adm,
                              clip_id=args.clip_id or "", threads=args.threads)
    fm.to_csv(args.out)
    print(f"{len(fm)} frames x {len(fm.column_names)} features -> {args.out}")


def clip_features(record: ClipRecord, manifest_path, columns, cfg, threads=1) -> FeatureMatrix:
    """Features for a manifest clip: from ``features_path`` or computed from videos."""
    if "features_path" in record.extra:
        fm = FeatureMatrix.from_csv(_existing(resolve_path(manifest_path, record.extra["features_path"])),
                                    clip_id=record.clip_id)
        return fm.select(columns)
    deg, _, src, alignment = align_clip(resolve_path(manifest_path, record.degraded_path),
                                        resolve_path(manifest_path, record.reference_path), cfg, threads)
    reference = _lumas(assemble_reference(src, alignment))
    degraded = _match_dims(_lumas(deg), reference)
    adm = record.extra.get("adm_path")
    adm = resolve_path(manifest_path, adm) if adm else None
    return build_feature_matrix(columns, alignment, degraded, reference, adm,
                                clip_id=record.clip_id, threads=threads)


def _split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def cmd_train(args):
    manifest = _existing(args.manifest)
    records = load_manifest(manifest)
    train_recs, val_recs = split_by_source(records, _split_list(args.val_sources))
    columns = parse_selection(args.select)
    cfg = _marker_config(args)
    X_train = [clip_features(r, manifest, columns, cfg, args.threads) for r in train_recs]
    X_val = [clip_features(r, manifest, columns, cfg, args.threads) for r in val_recs]
    y_train = [r.mos for r in train_recs]
    y_val = [r.mos for r in val_recs]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for run in range(args.runs):
        seed = args.seed + run
        model = VCMRegressor(num_layers=args.layers, hidden_size=args.hidden, learning_rate=args.lr,
                             batch_size=args.batch_size, max_epochs=args.epochs, clip_norm=args.clip_norm,
                             seed=seed, log_path=str(out / f"train_log_run{run}.jsonl"))
        model.fit(X_train, y_train, eval_set=(X_val, y_val))
        ckpt_path = out / f"model_run{run}.vcmm"
        save_checkpoint(model.to_checkpoint(), ckpt_path)
        report = evaluate_model(model.predict(X_val), y_val, [r.clip_id for r in val_recs])
        runs.append({"run": run, "seed": seed, "checkpoint": ckpt_path.name, "best_epoch": model.best_epoch_,
                     "raw_val_pcc": model.best_score_, "pcc": report.pcc, "rmse": report.rmse})
        print(f"run {run}: best epoch {model.best_epoch_}, mapped PCC {report.pcc:.4f}, RMSE {report.rmse:.4f}")
    summary = {"model": f"lstm-{args.layers}x{args.hidden}", "features": ",".join(columns),
               "n_train": len(train_recs), "n_clips": len(val_recs),
               "pcc": float(np.mean([r["pcc"] for r in runs])),
               "rmse": float(np.mean([r["rmse"] for r in runs])), "runs": runs}
    (out / "train_report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"mean over {args.runs} run(s): PCC {summary['pcc']:.4f}, RMSE {summary['rmse']:.4f}")


def cmd_predict(args):
    ckpt = load_checkpoint(_existing(args.checkpoint))
    model = VCMRegressor.from_checkpoint(ckpt)
    rows = []
    for path in args.features:
        fm = FeatureMatrix.from_csv(_existing(path), clip_id=Path(path).stem)
        for name in ckpt.column_names:
            if name not in fm.column_names:
                raise ValueError(f"{path}: missing column {name!r} required by the checkpoint")
        fm = fm.select(ckpt.column_names)
        timeline = model.predict_timeline([fm])[0]
        clip_id = args.clip_id if (args.clip_id and len(args.features) == 1) else fm.clip_id
        rows.append((clip_id, timeline.clip_score))
        if args.out:
            target = Path(args.out)
            if len(args.features) > 1:
                target.mkdir(parents=True, exist_ok=True)
                target = target / f"{fm.clip_id}_timeline.csv"
            raw = FeatureMatrix.from_csv(path)
            export_timeline(timeline, target, raw)
        print(f"{clip_id}\t{timeline.clip_score:.6f}")
    if args.predictions:
        with open(args.predictions, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["clip_id", "prediction"])
            for clip_id, score in rows:
                writer.writerow([clip_id, f"{score:.9g}"])


def _read_predictions(path, column):
    with open(_existing(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "clip_id" not in reader.fieldnames:
            raise ValueError(f"{path}: needs a clip_id column")
        if column not in reader.fieldnames:
            raise ValueError(f"{path}: no column {column!r}; have {reader.fieldnames}")
        return {row["clip_id"]: float(row[column]) for row in reader}


def cmd_eval(args):
    preds = _read_predictions(args.predictions, args.column)
    records = {r.clip_id: r for r in load_manifest(_existing(args.manifest))}
    missing = sorted(set(preds) - set(records))
    unscored = sorted(set(records) - set(preds))
    if missing or (unscored and not args.allow_partial):
        raise ValueError(f"clip ids differ: not in manifest {missing[:5]}, without prediction {unscored[:5]}")
    ids = sorted(preds)
    calib_sources = set(_split_list(args.calibration_sources))
    calibration = None
    if calib_sources:
        calib_ids = [i for i in ids if records[i].source_id in calib_sources]
        ids = [i for i in ids if records[i].source_id not in calib_sources]
        if not calib_ids or not ids:
            raise ValueError("calibration split leaves an empty side")
        calibration = ([preds[i] for i in calib_ids], [records[i].mos for i in calib_ids])
    report = evaluate_model([preds[i] for i in ids], [records[i].mos for i in ids], ids, calibration)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_json(out / "report.json", model=args.model_name or args.column, features=args.features_label or "")
    report.write_scatter(out / "scatter.csv")
    print(json.dumps({k: doc[k] for k in ("model", "pcc", "rmse", "n_clips")}))


def cmd_synth(args):
    script = DegradationScript.load(_existing(args.script))
    header, src = read_video(_existing(args.src))
    degraded, r_star = apply_degradation(src, script, seed=args.seed, noise_sigma=args.noise,
                                         max_frames=args.frames)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clip_id = args.clip_id or f"{Path(args.src).stem}_{Path(args.script).stem}_s{args.seed}"
    deg_path = out / f"{clip_id}.y4m"
    save_video(deg_path, header, degraded)
    AlignmentVector(r_star).to_csv(out / f"{clip_id}_truth.csv")
    mos = synthetic_mos(r_star, args.noise)
    record = ClipRecord(clip_id, deg_path.name, args.source_id or Path(args.src).stem,
                        str(Path(args.src).resolve()), mos, 0, args.profile_id or Path(args.script).stem,
                        {"script": script.to_json(), "seed": args.seed, "noise_sigma": args.noise})
    manifest = out / "manifest.jsonl"
    existing = {r.clip_id for r in load_manifest(manifest)} if manifest.exists() else set()
    if clip_id in existing:
        raise ValueError(f"clip {clip_id!r} already in {manifest}")
    write_manifest(manifest, [record], append=True)
    print(f"{clip_id}: {len(degraded)} frames, synthetic MOS {mos:.3f}")


# -- parser ----------------------------------------------------------------------------

def _add_marker_args(p):
    p.add_argument("--cell-size", type=int, default=8, help="marker cell size in pixels (default 8)")
    p.add_argument("--margin", type=int, default=16, help="marker inset from the frame corner (default 16)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcmos", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="worker threads (default 1, deterministic)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="stamp frame-index markers on every frame of a source video")
    p.add_argument("src")
    p.add_argument("out")
    _add_marker_args(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("make-source", help="write a procedural marked source video")
    p.add_argument("out")
    p.add_argument("--frames", type=int, default=270)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=192)
    p.add_argument("--fps", type=int, default=30)
    _add_marker_args(p)
    p.set_defaults(func=cmd_make_source)

    p = sub.add_parser("align", help="alignment CSV and aligned reference for a degraded recording")
    p.add_argument("degraded")
    p.add_argument("src")
    p.add_argument("out_dir")
    _add_marker_args(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("features", help="per-frame feature CSV")
    p.add_argument("--alignment", required=True)
    p.add_argument("--degraded")
    p.add_argument("--reference", help="aligned reference video")
    p.add_argument("--select", default=FULL_SELECTION, help=f"comma-separated features (default {FULL_SELECTION})")
    p.add_argument("--adm", help="external CSV with adm2, adm_scale0..3 per frame")
    p.add_argument("--clip-id")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the LSTM on a manifest with a source-disjoint split")
    p.add_argument("manifest")
    p.add_argument("--val-sources", required=True, help="comma-separated source ids held out for validation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--select", default=FULL_SELECTION)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--runs", type=int, default=1)
    _add_marker_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-frame and clip scores from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("features", nargs="+")
    p.add_argument("-o", "--out", help="timeline CSV (directory when several feature files are given)")
    p.add_argument("--predictions", help="write clip_id,prediction CSV")
    p.add_argument("--clip-id")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="map predictions to MOS and report PCC / RMSE")
    p.add_argument("predictions")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--column", default="prediction", help="score column to evaluate (e.g. a baseline metric)")
    p.add_argument("--calibration-sources", help="fit the mapping on these sources, report on the rest")
    p.add_argument("--allow-partial", action="store_true", help="allow manifest clips without predictions")
    p.add_argument("--model-name")
    p.add_argument("--features-label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="apply a degradation script to a source video")
    p.add_argument("script")
    p.add_argument("src")
    p.add_argument("out_dir")
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE_SIGMA)
    p.add_argument("--frames", type=int, help="truncate the degraded clip to this many frames")
    p.add_argument("--clip-id")
    p.add_argument("--source-id")
    p.add_argument("--profile-id")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
