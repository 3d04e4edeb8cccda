"""Domain types, interval arithmetic and video (de)serialization."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

VIDEO_MAGIC = b"GIMV"
VIDEO_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class ExpressionClass:
    name: str
    index: int
    general_duration: int
    min_len: int
    max_len: int

    def __post_init__(self):
        if self.general_duration <= 0:
            raise ValueError(f"{self.name}: general_duration must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"{self.name}: need 1 <= min_len <= max_len")

    def accepts_length(self, length: int) -> bool:
        return self.min_len <= length <= self.max_len


# 30 fps defaults
MAE = ExpressionClass("MaE", 0, general_duration=32, min_len=16, max_len=120)
ME = ExpressionClass("ME", 1, general_duration=16, min_len=3, max_len=15)
DEFAULT_CLASSES: tuple[ExpressionClass, ...] = (MAE, ME)


def make_classes(mae_duration=32, mae_min=16, mae_max=120, me_duration=16, me_min=3, me_max=15):
    mae = ExpressionClass("MaE", 0, mae_duration, mae_min, mae_max)
    me = ExpressionClass("ME", 1, me_duration, me_min, me_max)
    if not me.general_duration < mae.general_duration:
        raise ValueError("ME general duration must be shorter than MaE")
    return (mae, me)


def class_index(name: str, classes: Sequence[ExpressionClass] = DEFAULT_CLASSES) -> int:
    for c in classes:
        if c.name == name:
            return c.index
    raise DataError(f"unknown expression class {name!r}")


class Interval(NamedTuple):
    """Inclusive frame interval ``[s, e]``."""

    s: int
    e: int

    @property
    def length(self) -> int:
        return self.e - self.s + 1


def interval_iou(a: Sequence[int], b: Sequence[int]) -> float:
    """Frame-count IoU of two inclusive intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def clamp_window(center: int, half_width: int, T: int) -> Interval:
    return Interval(max(0, center - half_width), min(T - 1, center + half_width))


@dataclass(frozen=True)
class PointLabel:
    p: int
    cls: int


@dataclass(frozen=True)
class GroundTruthInstance:
    onset: int
    apex: int
    offset: int
    cls: int

    def __post_init__(self):
        if not self.onset <= self.apex <= self.offset:
            raise DataError(f"truth needs onset <= apex <= offset, got {self}")

    @property
    def interval(self) -> Interval:
        return Interval(self.onset, self.offset)

    @property
    def length(self) -> int:
        return self.offset - self.onset + 1


@dataclass
class VideoSample:
    id: str
    features: np.ndarray
    points: list[PointLabel] = field(default_factory=list)
    truth: list[GroundTruthInstance] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            if self.features.size == 0:
                self.features = self.features.reshape(0, 0)
            else:
                raise DataError(f"{self.id}: features must be a T x D matrix")
        T = self.T
        for pt in self.points:
            if not 0 <= pt.p < T:
                raise DataError(f"{self.id}: point label {pt.p} outside [0, {T})")
        for g in self.truth or ():
            if g.onset < 0 or g.offset >= T:
                raise DataError(f"{self.id}: truth interval [{g.onset}, {g.offset}] outside [0, {T})")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


def video_to_dict(video: VideoSample, classes=DEFAULT_CLASSES, features=True) -> dict:
    names = [c.name for c in classes]
    doc = {
        "id": video.id,
        "T": video.T,
        "D": video.D,
        "features": video.features.tolist() if features else None,
        "points": [{"p": pt.p, "class": names[pt.cls]} for pt in video.points],
        "truth": None
        if video.truth is None
        else [
            {"onset": g.onset, "apex": g.apex, "offset": g.offset, "class": names[g.cls]}
            for g in video.truth
        ],
    }
    return doc


def video_from_dict(doc: dict, classes=DEFAULT_CLASSES, features=None) -> VideoSample:
    try:
        if features is None:
            try:
                features = np.asarray(doc["features"], dtype=np.float64).reshape(doc["T"], doc["D"])
            except ValueError as exc:
                raise DataError(f"{doc.get('id')}: features do not match declared shape ({exc})") from exc
        points = [PointLabel(int(d["p"]), class_index(d["class"], classes)) for d in doc.get("points", [])]
        truth = doc.get("truth")
        if truth is not None:
            truth = [
                GroundTruthInstance(int(d["onset"]), int(d["apex"]), int(d["offset"]), class_index(d["class"], classes))
                for d in truth
            ]
        video = VideoSample(str(doc["id"]), features, points, truth)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed video document: {exc}") from exc
    if video.T != doc["T"] or (video.T and video.D != doc["D"]):
        raise DataError(f"{video.id}: declared shape ({doc['T']}, {doc['D']}) does not match features")
    return video


def write_features_bin(path, features: np.ndarray) -> None:
    features = np.asarray(features)
    T, D = features.shape
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC + struct.pack("<III", T, D, VIDEO_VERSION))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != VIDEO_MAGIC:
        raise DataError(f"{path}: not a GIMV feature file")
    T, D, version = struct.unpack("<III", raw[4:16])
    if version != VIDEO_VERSION:
        raise DataError(f"{path}: unsupported GIMV version {version}")
    body = raw[16:]
    if len(body) != 4 * T * D:
        raise DataError(f"{path}: expected {T}x{D} float32 payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)


def save_video(video: VideoSample, path, classes=DEFAULT_CLASSES, binary=False) -> None:
    """Write ``<path>`` as JSON; with ``binary`` the features go to a sibling ``.gimv`` file."""
    path = Path(path)
    doc = video_to_dict(video, classes, features=not binary)
    if binary:
        bin_path = path.with_suffix(".gimv")
        write_features_bin(bin_path, video.features)
        doc["features_file"] = bin_path.name
    path.write_text(json.dumps(doc))


def load_video(path, classes=DEFAULT_CLASSES) -> VideoSample:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    features = None
    if doc.get("features") is None and doc.get("features_file"):
        features = read_features_bin(path.parent / doc["features_file"])
    return video_from_dict(doc, classes, features)
