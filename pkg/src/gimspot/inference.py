"""Proposal generation from intensity and apex score tracks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import DEFAULT_CLASSES, ExpressionClass, Interval, VideoSample, class_index, interval_iou
from .model import ModelParams, forward

NMS_METHODS = ("hard", "linear", "gaussian")


def default_thresholds() -> tuple[float, ...]:
    return tuple(round(0.10 + 0.05 * i, 2) for i in range(17))


@dataclass
class InferConfig:
    thresholds: tuple[float, ...] = field(default_factory=default_thresholds)
    apex_class_threshold: float = 0.5
    nms_method: str = "linear"
    iou_threshold: float = 0.5
    nms_sigma: float = 0.5
    score_floor: float = 0.2
    # "apex" classifies on S alone; "fused" multiplies by the intensity at the apex
    class_score: str = "apex"

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds:
            raise ValueError("threshold set must be non-empty")
        if any(not 0 < t < 1 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.nms_method not in NMS_METHODS:
            raise ValueError(f"nms_method must be one of {NMS_METHODS}")
        if self.class_score not in ("apex", "fused"):
            raise ValueError("class_score must be 'apex' or 'fused'")
        if not 0 <= self.iou_threshold <= 1:
            raise ValueError("iou_threshold must lie in [0, 1]")
        if self.nms_sigma <= 0:
            raise ValueError("nms_sigma must be positive")
        if not 0 <= self.apex_class_threshold < 1:
            raise ValueError("apex_class_threshold must lie in [0, 1)")


@dataclass(frozen=True)
class Proposal:
    s: int
    e: int
    cls: int
    oic: float
    apex: int

    @property
    def interval(self) -> Interval:
        return Interval(self.s, self.e)

    @property
    def length(self) -> int:
        return self.e - self.s + 1

    def with_score(self, oic: float) -> "Proposal":
        return Proposal(self.s, self.e, self.cls, oic, self.apex)

    def to_dict(self, classes: Sequence[ExpressionClass] = DEFAULT_CLASSES) -> dict:
        return {"s": self.s, "e": self.e, "class": classes[self.cls].name, "oic": self.oic, "apex": self.apex}


def segments_above(a: np.ndarray, threshold: float) -> list[Interval]:
    """Maximal runs of frames with ``a > threshold``."""
    above = np.concatenate(([False], np.asarray(a) > threshold, [False]))
    edges = np.flatnonzero(above[1:] != above[:-1])
    return [Interval(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def oic_score(a: np.ndarray, interval: Sequence[int]) -> float:
    """Inner mean minus outer contrast.

    ``ceil(L/4)`` frames on each side form the outer region, frames beyond
    the video count as 0, and the outer sum is divided by ``L/2``.
    """
    s, e = int(interval[0]), int(interval[1])
    L = e - s + 1
    m = math.ceil(L / 4)
    a = np.asarray(a)
    inner = float(a[s : e + 1].mean())
    outer = float(a[max(0, s - m) : s].sum() + a[e + 1 : e + 1 + m].sum())
    return inner - outer / (L / 2)


def classify_proposal(
    interval: Sequence[int],
    a: np.ndarray,
    S: np.ndarray,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
    apex_class_threshold: float = 0.5,
    class_score: str = "apex",
    oic: float | None = None,
) -> list[Proposal]:
    s, e = int(interval[0]), int(interval[1])
    L = e - s + 1
    apex = s + int(np.argmax(a[s : e + 1]))
    if oic is None:
        oic = oic_score(a, (s, e))
    out = []
    for c in classes:
        score = S[apex, c.index]
        if class_score == "fused":
            score = score * a[apex]
        if c.accepts_length(L) and score > apex_class_threshold:
            out.append(Proposal(s, e, c.index, oic, apex))
    return out


def _order_key(p: Proposal):
    return (-p.oic, p.s, p.e)


def nms_decay(iou: float, method: str, iou_threshold: float = 0.5, sigma: float = 0.5) -> float:
    """Score multiplier applied to a rival overlapping the kept proposal by ``iou``."""
    if method == "hard":
        return 0.0 if iou > iou_threshold else 1.0
    if method == "linear":
        return 1.0 - iou if iou > iou_threshold else 1.0
    return math.exp(-(iou**2) / sigma)


def soft_nms(
    proposals: Iterable[Proposal],
    method: str = "linear",
    iou_threshold: float = 0.5,
    sigma: float = 0.5,
    floor: float = 0.0,
) -> list[Proposal]:
    """Class-wise greedy suppression; overlapping rivals are decayed or removed.

    Intervals are never modified. Proposals whose (decayed) score drops below
    ``floor``, or whose decay factor reaches 0, are discarded.
    """
    if method not in NMS_METHODS:
        raise ValueError(f"unknown NMS method {method!r}")
    by_class: dict[int, list[Proposal]] = {}
    for p in proposals:
        by_class.setdefault(p.cls, []).append(p)
    kept = []
    for cls in sorted(by_class):
        pool = [p for p in by_class[cls] if p.oic >= floor]
        while pool:
            best = min(pool, key=_order_key)
            pool.remove(best)
            kept.append(best)
            survivors = []
            for p in pool:
                factor = nms_decay(interval_iou(best.interval, p.interval), method, iou_threshold, sigma)
                # a zero factor means full suppression, whatever the floor
                if factor > 0.0 and p.oic * factor >= floor:
                    survivors.append(p.with_score(p.oic * factor))
            pool = survivors
    return kept


def proposals_from_scores(
    a: np.ndarray,
    S: np.ndarray,
    cfg: InferConfig | None = None,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
) -> list[Proposal]:
    cfg = cfg or InferConfig()
    pooled: dict[tuple[int, int, int], Proposal] = {}
    for thr in sorted(set(cfg.thresholds)):
        for seg in segments_above(a, thr):
            for p in classify_proposal(seg, a, S, classes, cfg.apex_class_threshold, cfg.class_score):
                key = (p.s, p.e, p.cls)
                if key not in pooled or p.oic > pooled[key].oic:
                    pooled[key] = p
    candidates = [pooled[k] for k in sorted(pooled)]
    return soft_nms(candidates, cfg.nms_method, cfg.iou_threshold, cfg.nms_sigma, cfg.score_floor)


def infer_video(
    video: VideoSample,
    params: ModelParams,
    cfg: InferConfig | None = None,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
) -> list[Proposal]:
    if video.T == 0:
        return []
    tracks = forward(params, video.features)
    return proposals_from_scores(tracks.a, tracks.S, cfg, classes)


def proposals_to_json(proposals: Sequence[Proposal], classes=DEFAULT_CLASSES) -> list[dict]:
    return [p.to_dict(classes) for p in proposals]


def proposals_from_json(records: Sequence[dict], classes=DEFAULT_CLASSES) -> list[Proposal]:
    return [
        Proposal(int(r["s"]), int(r["e"]), class_index(r["class"], classes), float(r["oic"]), int(r["apex"]))
        for r in records
    ]
