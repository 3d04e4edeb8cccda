"""IoU-matched detection metrics and apex localization error."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DEFAULT_CLASSES, ExpressionClass, GroundTruthInstance, interval_iou
from .inference import Proposal


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class MatchResult:
    per_class: dict[int, Counts] = field(default_factory=dict)
    pairs: list[tuple[Proposal, GroundTruthInstance]] = field(default_factory=list)

    @property
    def overall(self) -> Counts:
        total = Counts()
        for c in self.per_class.values():
            total = total + c
        return total


def match_proposals(
    proposals: Sequence[Proposal],
    truths: Sequence[GroundTruthInstance],
    iou_threshold: float = 0.5,
    n_classes: int = 2,
) -> MatchResult:
    """Greedy one-to-one matching per class, highest OIC first.

    Each proposal takes the unmatched same-class truth with the largest IoU
    (earliest truth on ties) provided the IoU reaches ``iou_threshold``.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    result = MatchResult({c: Counts() for c in range(n_classes)})
    for c in range(n_classes):
        props = sorted((p for p in proposals if p.cls == c), key=lambda p: (-p.oic, p.s, p.e))
        gts = [g for g in truths if g.cls == c]
        taken = [False] * len(gts)
        counts = result.per_class[c]
        for p in props:
            best, best_iou = -1, iou_threshold
            for j, g in enumerate(gts):
                if taken[j]:
                    continue
                iou = interval_iou(p.interval, g.interval)
                if iou >= best_iou and (best < 0 or iou > best_iou):
                    best, best_iou = j, iou
            if best >= 0:
                taken[best] = True
                counts.tp += 1
                result.pairs.append((p, gts[best]))
            else:
                counts.fp += 1
        counts.fn += taken.count(False)
    return result


@dataclass
class ApexError:
    errors: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.errors)

    @property
    def value(self) -> float | None:
        """Mean normalized error, or None when there is no true positive."""
        return float(np.mean(self.errors)) if self.errors else None


def apex_errors(matches: MatchResult, cls: int | None = None) -> ApexError:
    out = ApexError()
    for p, g in matches.pairs:
        if cls is None or g.cls == cls:
            out.errors.append(abs(p.apex - g.apex) / g.length)
    return out


def nmae(matches: MatchResult, cls: int | None = None) -> float | None:
    return apex_errors(matches, cls).value


def evaluate_dataset(
    predictions: Mapping[str, Sequence[Proposal]],
    truths: Mapping[str, Sequence[GroundTruthInstance]],
    iou_threshold: float = 0.5,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
    mode: str = "pooled",
) -> dict:
    """Aggregate report over videos.

    ``pooled`` sums TP/FP/FN over every video before computing scores;
    ``per_video`` additionally reports the mean of per-video F1 values.
    """
    if set(predictions) != set(truths):
        raise ValueError("predictions and truths cover different video ids")
    if mode not in ("pooled", "per_video"):
        raise ValueError("mode must be 'pooled' or 'per_video'")
    C = len(classes)
    pooled = MatchResult({c: Counts() for c in range(C)})
    per_video = {}
    n_props = n_truth = 0
    for vid in sorted(truths):
        m = match_proposals(predictions[vid], truths[vid], iou_threshold, C)
        for c in range(C):
            pooled.per_class[c] = pooled.per_class[c] + m.per_class[c]
        pooled.pairs.extend(m.pairs)
        n_props += len(predictions[vid])
        n_truth += len(truths[vid])
        per_video[vid] = m.overall.to_dict()

    nmae_section = {c.name: nmae(pooled, c.index) for c in classes}
    nmae_section["overall"] = nmae(pooled)
    nmae_section["k"] = {c.name: apex_errors(pooled, c.index).k for c in classes}
    nmae_section["k"]["overall"] = apex_errors(pooled).k
    report = {
        "iou_threshold": iou_threshold,
        "mode": mode,
        "per_class": {c.name: pooled.per_class[c.index].to_dict() for c in classes},
        "overall": pooled.overall.to_dict(),
        "nmae": nmae_section,
        "counts": {"videos": len(truths), "proposals": n_props, "truths": n_truth},
    }
    if mode == "per_video":
        report["per_video"] = per_video
        report["per_video_mean_f1"] = float(np.mean([v["f1"] for v in per_video.values()])) if per_video else 0.0
    return report


def format_report(report: dict) -> str:
    def fmt(x):
        return "   n/a" if x is None else f"{x:6.4f}"

    rows = [f"{'class':<8} {'TP':>5} {'FP':>5} {'FN':>5} {'prec':>7} {'rec':>7} {'F1':>7} {'NMAE':>7}"]
    for name, c in list(report["per_class"].items()) + [("overall", report["overall"])]:
        rows.append(
            f"{name:<8} {c['tp']:>5} {c['fp']:>5} {c['fn']:>5} "
            f"{c['precision']:7.4f} {c['recall']:7.4f} {c['f1']:7.4f} {fmt(report['nmae'][name]):>7}"
        )
    return "\n".join(rows)
