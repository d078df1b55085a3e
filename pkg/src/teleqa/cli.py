"""``teleqa`` command-line entry point.

Exit codes: 0 ok, 1 I/O or file format, 2 configuration or validation,
3 numerical failure. Settings resolve as defaults, then flags, then the
config file (``--config`` or ``$TELEQA_CONFIG``), the file taking
precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, config_from_dict, load_config
from .errors import ConfigError, FormatError, NumericalOverflowError
from .features import CacheRecord, cache_write
from .pipeline import (
    FeatureTracker,
    TeleVQA,
    predict_offline,
    predict_online,
    quality_map,
    train_model,
    write_pgm,
    write_trace,
)
from .stream_io import COUPLINGS, MANIFEST, SynthSpec, load_stream, packetize, severity_dataset, store_stream
from .study import read_ratings, recover_scores, screen_subjects, split_half_consistency, study_report

MOS_FILE = "mos.csv"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _resolve_config(args, flags: dict, base: Config = None) -> Config:
    cfg = config_from_dict(flags, base) if flags else (base or Config())
    return load_config(getattr(args, "config", None), base=cfg)


def _modalities(text):
    if text is None:
        return None
    mods = tuple(m.strip() for m in text.split(",") if m.strip())
    if not mods:
        raise UsageError("--modalities needs at least one of p,f,c,a")
    return mods


def _grid(text: str):
    try:
        m, n = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects MxN, got {text!r}") from None
    return m, n


def _scale(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--scale expects LO,HI, got {text!r}") from None
    return lo, hi


def _open_stream(path):
    manifest = Path(path) / MANIFEST
    if manifest.is_file():
        try:
            if int(json.loads(manifest.read_text()).get("n_frames", 0)) == 0:
                raise UsageError("no packets: stream has zero frames")
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            if isinstance(exc, UsageError):
                raise
            raise FormatError(f"bad manifest: {exc}") from exc
    return load_stream(path)


def _load_model(weights, args) -> TeleVQA:
    model = TeleVQA.load(weights)
    model.config = load_config(args.config, base=model.config)
    model.validate()
    return model


def _read_dataset(data_dir):
    data_dir = Path(data_dir)
    mos_path = data_dir / MOS_FILE
    if not mos_path.is_file():
        raise FileNotFoundError(f"missing {mos_path}")
    with open(mos_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"stream", "mos"} <= set(rows[0]):
        raise FormatError(f"{mos_path} needs columns stream,mos")
    streams = [_open_stream(data_dir / r["stream"]) for r in rows]
    return streams, [float(r["mos"]) for r in rows]


def _write_loss_log(path, logs: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "epoch", "train_loss", "val_loss"])
        for stage, tl in logs.items():
            for i, loss in enumerate(tl.epoch_loss):
                val = tl.val_loss[i] if i < len(tl.val_loss) else ""
                w.writerow([stage, i, repr(float(loss)), "" if val == "" else repr(float(val))])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec = SynthSpec(width=args.size, height=args.size, fps=args.fps, n_frames=args.frames,
                     sample_rate=None if args.no_audio else args.sample_rate)
    streams, mos, labels = severity_dataset(args.n, seed=args.seed, coupling=args.coupling, spec=spec,
                                            local=args.local)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(max(args.n - 1, 0)))
    with open(out / MOS_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream", "mos", "distortions"])
        for i, (stream, m, ds) in enumerate(zip(streams, mos, labels)):
            name = f"stream_{i:0{width}d}"
            store_stream(stream, out / name)
            w.writerow([name, repr(m), ";".join(f"{d.kind}:{d.severity:.6f}" for d in ds)])
    print(f"wrote {args.n} streams to {out}")
    return 0


def cmd_extract(args) -> int:
    cfg = _resolve_config(args, {})
    stream = _open_stream(args.stream)
    model = TeleVQA.build(cfg)
    mods = tuple(m for m in cfg.modalities if m != "p")
    if args.weights:
        model = _load_model(args.weights, args)
        mods = model.config.modalities
    tracker = FeatureTracker(model, mods)
    records = []
    order = ("patch", "frame", "clip", "audio")
    for packet in packetize(stream, model.config.clip_len):
        vecs = tracker.update(packet).vectors
        records.extend(CacheRecord(packet.step, m, vecs[m].values) for m in order if m in vecs)
    cache_write(args.out, records)
    counts = {m: sum(r.modality == m for r in records) for m in order}
    print(" ".join(f"{m}={n}" for m, n in counts.items() if n))
    return 0


def cmd_train(args) -> int:
    flags = {"seed": args.seed}
    if args.epochs is not None:
        flags["train"] = {"epochs": args.epochs}
    if args.head_epochs is not None:
        flags["head_train"] = {"epochs": args.head_epochs}
    if args.modalities:
        flags["modalities"] = list(_modalities(args.modalities))
    cfg = _resolve_config(args, flags)
    streams, mos = _read_dataset(args.data)
    if len(streams) < 2:
        raise UsageError("training needs at least two streams")
    order = np.random.default_rng(cfg.seed).permutation(len(streams))
    n_val = int(round(args.val_fraction * len(streams)))
    if n_val and len(streams) - n_val < 2:
        raise UsageError("validation split leaves fewer than two training streams")
    val_idx, tr_idx = order[:n_val], order[n_val:]
    val = ([streams[i] for i in val_idx], [mos[i] for i in val_idx]) if n_val else None
    logs: dict = {}
    model = train_model([streams[i] for i in tr_idx], [mos[i] for i in tr_idx], cfg, val=val, logs=logs)
    out = Path(args.out)
    model.save(out)
    _write_loss_log(out / "loss_log.csv", logs)
    final = logs["pathways"]
    msg = f"trained on {len(tr_idx)} streams; final train loss {final.epoch_loss[-1]:.6f}"
    if final.val_loss:
        msg += f"; best val loss {min(final.val_loss):.6f} at epoch {final.best_epoch}"
    print(msg)
    return 0


def cmd_predict(args) -> int:
    model = _load_model(args.weights, args)
    stream = _open_stream(args.stream)
    packets = packetize(stream, model.config.clip_len)
    if not packets:
        raise UsageError("no packets")
    triples = predict_offline(model, packets) if args.offline else predict_online(model, packets)
    write_trace(args.out, triples)
    last = triples[-1]
    print(f"steps={len(triples)} S_v={last.S_v:.4f} S_a={last.S_a:.4f} S_av={last.S_av:.4f}")
    return 0


def cmd_qmap(args) -> int:
    model = _load_model(args.weights, args)
    if model.head is None:
        raise ConfigError("weights contain no scoring head")
    stream = _open_stream(args.stream)
    if not 0 <= args.frame < stream.n_frames:
        raise UsageError(f"--frame {args.frame} outside 0..{stream.n_frames - 1}")
    m, n = _grid(args.grid)
    scores = quality_map(stream.frames[args.frame], m, n, model.frame_extractor, model.head,
                         model.config.clamp)
    write_pgm(args.out, scores, model.config.clamp)
    if args.cache:
        cache_write(args.cache, [CacheRecord(args.frame, "patch", scores.reshape(-1))])
    print(f"grid={m}x{n} mean={scores.mean():.4f} min={scores.min():.4f} max={scores.max():.4f}")
    return 0


def cmd_study_recover(args) -> int:
    table = read_ratings(args.ratings, _scale(args.scale), args.delimiter)
    rec = recover_scores(table, tol=args.tol, max_iter=args.max_iter)
    golden = None
    if args.golden:
        with open(args.golden, newline="") as fh:
            golden = {r["video_id"]: float(r["mos"]) for r in csv.DictReader(fh)}
    report = study_report(table, rec, screen_subjects(table, golden, args.threshold))
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_study_consistency(args) -> int:
    table = read_ratings(args.ratings, _scale(args.scale), args.delimiter)
    value = split_half_consistency(table, n_splits=args.splits, seed=args.seed)
    print(f"mean_srcc {value:.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="teleqa", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file; $TELEQA_CONFIG is used when omitted")
    common.add_argument("--seed", type=int, default=0, help="random seed")

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt,
                       help="write a synthetic severity-labelled stream set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=200, help="number of streams")
    p.add_argument("--frames", type=int, default=24, help="frames per stream")
    p.add_argument("--size", type=int, default=128, help="frame width and height")
    p.add_argument("--fps", type=float, default=10.0, help="frame rate")
    p.add_argument("--sample-rate", type=int, default=8000, help="audio sample rate")
    p.add_argument("--no-audio", action="store_true", help="video-only streams")
    p.add_argument("--coupling", choices=COUPLINGS, default="independent",
                   help="how distortion severities are shared between video and audio")
    p.add_argument("--local", action="store_true", help="confine video distortions to a random rectangle")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], formatter_class=fmt, help="write a feature cache")
    p.add_argument("--stream", required=True, help="stream container directory")
    p.add_argument("--out", required=True, help="output .tqaf file")
    p.add_argument("--weights", default=None, help="model bundle; enables patch features")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model bundle")
    p.add_argument("--data", required=True, help="directory with stream containers and mos.csv")
    p.add_argument("--out", required=True, help="output weights directory")
    p.add_argument("--epochs", type=int, default=None, help="pathway epochs; config value when omitted")
    p.add_argument("--head-epochs", type=int, default=None, help="scoring-head epochs; config value when omitted")
    p.add_argument("--modalities", default=None, help="comma list from p,f,c,a; config value when omitted")
    p.add_argument("--val-fraction", type=float, default=0.25, help="share of streams held out for selection")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], formatter_class=fmt, help="per-step quality trace")
    p.add_argument("--stream", required=True, help="stream container directory")
    p.add_argument("--weights", required=True, help="model bundle directory")
    p.add_argument("--out", required=True, help="output CSV trace")
    p.add_argument("--offline", action="store_true", help="use the batch reference path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("qmap", parents=[common], formatter_class=fmt, help="local quality map of one frame")
    p.add_argument("--stream", required=True, help="stream container directory")
    p.add_argument("--weights", required=True, help="model bundle directory")
    p.add_argument("--frame", type=int, default=0, help="frame index")
    p.add_argument("--grid", default="20x20", help="grid size MxN")
    p.add_argument("--out", required=True, help="output PGM image")
    p.add_argument("--cache", default=None, help="also store the map as a .tqaf record")
    p.set_defaults(func=cmd_qmap)

    p = sub.add_parser("study", formatter_class=fmt, help="subjective-study analytics")
    study = p.add_subparsers(dest="study_command", required=True)
    rating_args = argparse.ArgumentParser(add_help=False, parents=[common])
    rating_args.add_argument("--ratings", required=True, help="delimited ratings file")
    rating_args.add_argument("--scale", default="1,5", help="raw rating scale LO,HI")
    rating_args.add_argument("--delimiter", default=",", help="field delimiter")

    q = study.add_parser("recover", parents=[rating_args], formatter_class=fmt, help="recover true scores")
    q.add_argument("--out", default=None, help="JSON report path; stdout when omitted")
    q.add_argument("--tol", type=float, default=1e-8, help="convergence tolerance")
    q.add_argument("--max-iter", type=int, default=1000, help="iteration cap")
    q.add_argument("--golden", default=None, help="CSV video_id,mos of golden videos")
    q.add_argument("--threshold", type=float, default=0.5, help="screening LCC threshold")
    q.set_defaults(func=cmd_study_recover)

    q = study.add_parser("consistency", parents=[rating_args], formatter_class=fmt,
                         help="split-half inter-subject SRCC")
    q.add_argument("--splits", type=int, default=50, help="number of random splits")
    q.set_defaults(func=cmd_study_consistency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalOverflowError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
