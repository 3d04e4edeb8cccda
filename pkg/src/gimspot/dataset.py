"""Dataset directories: ``manifest.json`` plus ``videos/<id>.json``."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .core import DEFAULT_CLASSES, DataError, VideoSample, load_video


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise DataError(f"{path}: manifest not found")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("train", "test"):
        if not isinstance(manifest.get(key), list):
            raise DataError(f"{path}: '{key}' must be a list of video ids")
    check_split(manifest)
    return manifest


def check_split(manifest: dict) -> None:
    """Refuse manifests whose train and test ids overlap."""
    leak = sorted(set(manifest["train"]) & set(manifest["test"]))
    if leak:
        raise DataError(f"train/test split overlaps on {len(leak)} ids: {', '.join(leak[:10])}")


def video_path(data_dir, vid: str) -> Path:
    return Path(data_dir) / "videos" / f"{vid}.json"


def load_split(data_dir, split: str, classes=DEFAULT_CLASSES) -> list[VideoSample]:
    """Videos of ``split`` ("train", "test" or "all") in sorted id order."""
    manifest = read_manifest(data_dir)
    if split == "all":
        ids = sorted(set(manifest["train"]) | set(manifest["test"]))
    elif split in ("train", "test"):
        ids = sorted(manifest[split])
    else:
        raise ValueError(f"unknown split {split!r}")
    missing = [vid for vid in ids if not video_path(data_dir, vid).is_file()]
    if missing:
        raise DataError(f"{len(missing)} videos listed in the manifest are missing: {', '.join(missing[:10])}")
    videos = [load_video(video_path(data_dir, vid), classes) for vid in ids]
    for vid, v in zip(ids, videos):
        if v.id != vid:
            raise DataError(f"{video_path(data_dir, vid)} holds video {v.id!r}")
    return videos


def load_video_dir(path, classes=DEFAULT_CLASSES) -> list[VideoSample]:
    """Every ``*.json`` video in ``path`` (or ``path/videos``), sorted by id."""
    path = Path(path)
    if (path / "videos").is_dir():
        path = path / "videos"
    if not path.is_dir():
        raise DataError(f"{path}: not a directory")
    videos = [load_video(p, classes) for p in sorted(path.glob("*.json"))]
    return sorted(videos, key=lambda v: v.id)


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Ordered map; ``jobs > 1`` fans out to worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
