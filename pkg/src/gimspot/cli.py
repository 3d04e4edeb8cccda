"""Command-line entry point: gen, train, infer, eval, dump, config-ref.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_reference, load_config, parse_overrides
from .core import DataError, VideoSample
from .dataset import load_split, load_video_dir, parallel_map, read_manifest
from .evaluation import evaluate_dataset, format_report
from .gim import build_epoch_labels
from .inference import infer_video, proposals_from_json, proposals_to_json
from .model import CheckpointError, forward, load_checkpoint
from .synth import SynthError, generate_dataset
from .trainer import NumericError, theta_at_epoch, train

logger = logging.getLogger("gimspot")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DUMP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gimspot per-video label and score dump",
    "type": "object",
    "required": ["id", "epoch", "stage", "theta", "T", "labels", "instances", "scores"],
    "properties": {
        "id": {"type": "string"},
        "epoch": {"type": ["integer", "string"]},
        "stage": {"type": "integer", "enum": [1, 2, 3]},
        "theta": {"type": ["number", "null"]},
        "T": {"type": "integer", "minimum": 0},
        "labels": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "class", "soft_label", "is_apex", "is_neutral"],
                "additionalProperties": False,
                "properties": {
                    "frame": {"type": "integer", "minimum": 0},
                    "class": {"type": ["string", "null"]},
                    "soft_label": {"type": "number", "minimum": 0, "maximum": 1},
                    "is_apex": {"type": "boolean"},
                    "is_neutral": {"type": "boolean"},
                },
            },
        },
        "instances": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "apex", "range", "sigma"],
                "properties": {
                    "class": {"type": "string"},
                    "apex": {"type": "integer"},
                    "range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                    "sigma": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "scores": {
            "type": "object",
            "required": ["a", "S"],
            "properties": {
                "a": {"type": "array", "items": {"type": "number"}},
                "S": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "embeddings": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    },
}


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="sectioned key=value configuration file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    p.add_argument("--seed", type=int, help="shortcut for --set run.seed=N")
    p.add_argument("--jobs", type=int, help="worker processes for per-video work (run.jobs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gimspot", description="Point-supervised facial expression spotting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--binary", action="store_true", help="store features as .gimv float32 files")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on the train split of a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="run directory for checkpoints and the training log")
    p.add_argument("--save-every", type=int, default=0, help="also checkpoint every N epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="spot expressions with a trained checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory (or a directory of video JSON files)")
    p.add_argument("--out", required=True, help="prediction directory")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="prediction directory written by infer")
    p.add_argument("--truth", required=True, help="dataset directory (or a directory of video JSON files)")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--iou", type=float, help="IoU threshold (eval.iou_threshold)")
    p.add_argument("--mode", choices=("pooled", "per_video"), help="aggregation (eval.mode)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump", aliases=["dump-labels"], help="dump pseudo-labels, score tracks and embeddings")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epoch", default="final", help="'final' or an epoch number with a saved checkpoint")
    p.add_argument("--split", default="train", choices=("train", "test", "all"))
    p.add_argument("--embeddings", action="store_true", help="include the trunk embeddings of every frame")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("config-ref", help="print the configuration reference or a default config file")
    p.add_argument("--ini", action="store_true", help="emit a default configuration file instead")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_config_ref)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides.setdefault("run", {})["seed"] = str(args.seed)
    if args.jobs is not None:
        overrides.setdefault("run", {})["jobs"] = str(args.jobs)
    return load_config(args.config, overrides)


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    try:
        generate_dataset(cfg.synth_config(), args.out, binary=args.binary, jobs=cfg.run.jobs)
    except SynthError as exc:
        raise ConfigError(f"[synth] {exc}") from exc
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    videos = load_split(args.data, "train", cfg.class_set())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    train(videos, cfg.train_config(), cfg.class_set(), out, save_every=args.save_every)
    print(out / "ckpt_final.bin")
    return EXIT_OK


def _load_videos(data, split, classes) -> list[VideoSample]:
    if (Path(data) / "manifest.json").is_file():
        return load_split(data, split, classes)
    return load_video_dir(data, classes)


def _infer_one(video, params, cfg: RunConfig):
    classes = cfg.class_set()
    props = infer_video(video, params, cfg.infer, classes)
    tracks = forward(params, video.features) if video.T else None
    return video.id, proposals_to_json(props, classes), tracks


def cmd_infer(args) -> int:
    cfg = resolve_config(args)
    classes = cfg.class_set()
    params, _ = load_checkpoint(args.ckpt)
    videos = _load_videos(args.data, args.split, classes)
    if videos and videos[0].D != params.D:
        raise CheckpointError(f"checkpoint expects D={params.D}, data has D={videos[0].D}")
    out = Path(args.out)
    (out / "tracks").mkdir(parents=True, exist_ok=True)
    results = parallel_map(partial(_infer_one, params=params, cfg=cfg), videos, cfg.run.jobs)
    for vid, records, tracks in results:
        (out / f"{vid}.json").write_text(_dump_json(records))
        with open(out / "tracks" / f"{vid}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "a", *(f"S_{c.name}" for c in classes)])
            if tracks is not None:
                for t in range(len(tracks.a)):
                    writer.writerow([t, repr(float(tracks.a[t])), *(repr(float(x)) for x in tracks.S[t])])
    print(out)
    return EXIT_OK


def _read_predictions(path: Path, classes):
    try:
        records = json.loads(path.read_text())
        return path.stem, proposals_from_json(records, classes)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed prediction file ({exc})") from exc


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    classes = cfg.class_set()
    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise DataError(f"{pred_dir}: prediction directory not found")
    predictions = dict(parallel_map(partial(_read_predictions, classes=classes), sorted(pred_dir.glob("*.json")), cfg.run.jobs))
    videos = _load_videos(args.truth, args.split, classes)
    truths = {v.id: v.truth or [] for v in videos}
    missing = sorted(set(truths) - set(predictions))
    extra = sorted(set(predictions) - set(truths))
    if missing or extra:
        parts = []
        if missing:
            parts.append("no predictions for: " + ", ".join(missing))
        if extra:
            parts.append("no ground truth for: " + ", ".join(extra))
        raise DataError("video ids differ between predictions and truth; " + "; ".join(parts))
    iou = cfg.eval.iou_threshold if args.iou is None else args.iou
    if not 0 < iou <= 1:
        raise ConfigError("eval.iou_threshold must lie in (0, 1]")
    mode = args.mode or cfg.eval.mode
    report = evaluate_dataset(predictions, truths, iou, classes, mode)
    _write(args.out, _dump_json(report))
    if args.out is not None:
        print(format_report(report))
    return EXIT_OK


def _find_checkpoint(run_dir: Path, epoch: str) -> Path:
    if epoch == "final":
        path = run_dir / "ckpt_final.bin"
        if not path.is_file():
            raise DataError(f"{path}: final checkpoint not found")
        return path
    path = run_dir / f"ckpt_epoch{epoch}.bin"
    if path.is_file():
        return path
    for cand in sorted(run_dir.glob("ckpt_stage*.bin")):
        if str(load_checkpoint(cand)[1].get("epoch")) == epoch:
            return cand
    raise DataError(f"no checkpoint for epoch {epoch} in {run_dir} (train with --save-every)")


def cmd_dump(args) -> int:
    cfg = resolve_config(args)
    classes = cfg.class_set()
    tcfg = cfg.train_config()
    if args.epoch != "final" and not args.epoch.isdigit():
        raise ConfigError(f"--epoch must be 'final' or a non-negative integer, got {args.epoch!r}")
    epoch = tcfg.epochs - 1 if args.epoch == "final" else int(args.epoch)
    params, _ = load_checkpoint(_find_checkpoint(Path(args.run), args.epoch))
    stage = tcfg.stage_of(epoch)
    theta = theta_at_epoch(epoch - tcfg.n1 - tcfg.n2, tcfg) if stage == 3 else None

    videos = load_split(args.data, args.split, classes)
    order = {vid: i for i, vid in enumerate(sorted(read_manifest(args.data)["train"]))}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.json").write_text(_dump_json(DUMP_SCHEMA))
    for v in videos:
        tracks = forward(params, v.features)
        rng = np.random.default_rng([tcfg.seed, epoch, order.get(v.id, len(order))])
        store = build_epoch_labels(v, tracks.X, tracks.a, stage, tcfg.gim, classes, rng, theta)
        doc = {
            "id": v.id,
            "epoch": args.epoch if args.epoch == "final" else epoch,
            "stage": stage,
            "theta": theta,
            "T": v.T,
            "labels": store.to_records(classes),
            "instances": [
                {"class": classes[g.instance_class].name, "apex": g.apex, "range": list(g.range), "sigma": g.sigma}
                for g in store.instances
            ],
            "scores": {"a": tracks.a.tolist(), "S": {c.name: tracks.S[:, c.index].tolist() for c in classes}},
        }
        if args.embeddings:
            doc["embeddings"] = tracks.f.tolist()
        (out / f"{v.id}.json").write_text(json.dumps(doc, sort_keys=True) + "\n")
    print(out)
    return EXIT_OK


def cmd_config_ref(args) -> int:
    _write(args.out, RunConfig().to_ini() if args.ini else config_reference() + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
