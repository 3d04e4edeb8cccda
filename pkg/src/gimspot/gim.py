"""Gaussian instance-adaptive pseudo-labeling.

Each point label is turned into a soft intensity target in three steps:
find the pseudo-apex (highest predicted intensity near the point), estimate
the instance duration from intensities above ``theta``, then fit an
unnormalized Gaussian over feature distances to the apex feature. Frames
with no label and the lowest predicted intensity become pseudo-neutral.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DEFAULT_CLASSES, ExpressionClass, Interval, VideoSample, clamp_window

logger = logging.getLogger(__name__)

OVERLAP_STRATEGIES = ("random", "higher", "lower")
LABEL_MODES = ("soft", "hard")


@dataclass
class GimConfig:
    theta: float = 0.5
    delta: float = 1.2
    sigma_floor: float = 1e-6
    # per class, indexed like DEFAULT_CLASSES (MaE, ME)
    k_s1: tuple[int, ...] = (5, 3)
    k_s2: tuple[int, ...] = (4, 2)
    overlap_strategy: str = "random"
    label_mode: str = "soft"

    def __post_init__(self):
        self.k_s1 = tuple(int(k) for k in self.k_s1)
        self.k_s2 = tuple(int(k) for k in self.k_s2)
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if self.overlap_strategy not in OVERLAP_STRATEGIES:
            raise ValueError(f"overlap_strategy must be one of {OVERLAP_STRATEGIES}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")


@dataclass(frozen=True)
class InstanceGaussian:
    apex: int
    mu: np.ndarray
    sigma: float
    range: Interval
    instance_class: int


@dataclass
class PseudoLabelStore:
    """Pseudo-labels of one video for one epoch.

    ``soft_label`` is ``(C, T)`` with NaN where a class carries no label.
    """

    soft_label: np.ndarray
    apex_flag: np.ndarray
    neutral_flag: np.ndarray
    instances: list[InstanceGaussian] = field(default_factory=list)

    @classmethod
    def empty(cls, C: int, T: int) -> "PseudoLabelStore":
        return cls(
            np.full((C, T), np.nan),
            np.zeros((C, T), dtype=bool),
            np.zeros(T, dtype=bool),
        )

    @property
    def C(self) -> int:
        return self.soft_label.shape[0]

    @property
    def T(self) -> int:
        return self.soft_label.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        """``(C, T)`` mask of present expression labels."""
        return ~np.isnan(self.soft_label)

    @property
    def expression_mask(self) -> np.ndarray:
        return self.labeled.any(axis=0)

    @property
    def n_exp(self) -> int:
        return int(self.expression_mask.sum())

    @property
    def n_neut(self) -> int:
        return int(self.neutral_flag.sum())

    def max_label(self) -> np.ndarray:
        """Per-frame largest expression label, 0 where unlabeled."""
        return np.where(self.labeled, self.soft_label, 0.0).max(axis=0) if self.T else np.zeros(0)

    def pseudo_class(self) -> np.ndarray:
        """Per-frame class of the strongest label; ``C`` for unlabeled frames."""
        filled = np.where(self.labeled, self.soft_label, -1.0)
        cls = filled.argmax(axis=0)
        return np.where(self.expression_mask, cls, self.C)

    def to_records(self, classes: Sequence[ExpressionClass] = DEFAULT_CLASSES) -> list[dict]:
        records = []
        for t in range(self.T):
            for c in range(self.C):
                if not np.isnan(self.soft_label[c, t]):
                    records.append(
                        {
                            "frame": t,
                            "class": classes[c].name,
                            "soft_label": float(self.soft_label[c, t]),
                            "is_apex": bool(self.apex_flag[c, t]),
                            "is_neutral": False,
                        }
                    )
            if self.neutral_flag[t]:
                records.append({"frame": t, "class": None, "soft_label": 0.0, "is_apex": False, "is_neutral": True})
        return records

    def to_json(self, classes: Sequence[ExpressionClass] = DEFAULT_CLASSES) -> str:
        return json.dumps(self.to_records(classes), sort_keys=True)


def detect_pseudo_apex(a: np.ndarray, p: int, k_c: int) -> int:
    """Highest-intensity frame within ``k_c // 4`` of ``p``.

    Ties go to the frame nearest ``p``, then to the earlier one.
    """
    s, e = clamp_window(p, k_c // 4, len(a))
    window = np.asarray(a[s : e + 1])
    best = np.flatnonzero(window == window.max()) + s
    return int(min(best, key=lambda j: (abs(j - p), j)))


def estimate_duration(a: np.ndarray, apex: int, k_c: int, theta: float) -> int:
    s, e = clamp_window(apex, k_c // 2, len(a))
    return max(int(np.count_nonzero(np.asarray(a[s : e + 1]) > theta)), 1)


def _sigma_over(X: np.ndarray, mu: np.ndarray, K: Interval, sigma_floor: float) -> float:
    d2 = np.sum((X[K.s : K.e + 1] - mu) ** 2, axis=1)
    return max(sigma_floor, math.sqrt(float(d2.mean())))


def fit_instance_gaussian(
    X: np.ndarray, apex: int, L: int, delta: float, cfg: GimConfig, instance_class: int = 0
) -> InstanceGaussian:
    """Gaussian centred on the apex feature; spread from the mean squared
    feature distance over the expanded window (its clamped size is the divisor)."""
    if L < 1:
        raise ValueError("duration must be >= 1")
    K = clamp_window(apex, int(math.floor(delta * L / 2)), X.shape[0])
    mu = X[apex].copy()
    return InstanceGaussian(apex, mu, _sigma_over(X, mu, K, cfg.sigma_floor), K, instance_class)


def assign_soft_labels(g: InstanceGaussian, X: np.ndarray, hard: bool = False) -> dict[int, float]:
    frames = np.arange(g.range.s, g.range.e + 1)
    if hard:
        return {int(j): 1.0 for j in frames}
    d2 = np.sum((X[frames] - g.mu) ** 2, axis=1)
    labels = np.exp(-d2 / (2.0 * g.sigma**2))
    out = {int(j): float(v) for j, v in zip(frames, labels) if v > 0.0}
    out[g.apex] = 1.0
    return out


def resolve_overlaps(
    instances: Sequence[tuple[InstanceGaussian, dict[int, float]]],
    strategy: str,
    C: int,
    T: int,
    rng: np.random.Generator | None = None,
) -> PseudoLabelStore:
    """Merge per-instance labels into per-class arrays.

    Collisions inside one class are settled by ``strategy``; labels of
    different classes never collide because each class has its own array.
    """
    if strategy not in OVERLAP_STRATEGIES:
        raise ValueError(f"unknown overlap strategy {strategy!r}")
    if strategy == "random" and rng is None:
        raise ValueError("random overlap resolution needs an rng")
    store = PseudoLabelStore.empty(C, T)
    # candidates[c][t] -> list of (label, is_apex)
    candidates: list[dict[int, list[tuple[float, bool]]]] = [{} for _ in range(C)]
    for g, labels in sorted(instances, key=lambda item: item[0].apex):
        store.instances.append(g)
        for t, v in labels.items():
            candidates[g.instance_class].setdefault(t, []).append((v, t == g.apex))
    for c in range(C):
        for t in sorted(candidates[c]):
            cands = candidates[c][t]
            if len(cands) == 1:
                v, is_apex = cands[0]
            elif strategy == "higher":
                v, is_apex = max(cands, key=lambda x: (x[0], x[1]))
            elif strategy == "lower":
                v, is_apex = min(cands, key=lambda x: (x[0], not x[1]))
            else:
                v, is_apex = cands[int(rng.integers(len(cands)))]
            store.soft_label[c, t] = v
            store.apex_flag[c, t] = is_apex and v == 1.0
    return store


def neutral_count(n_exp: int, T: int) -> int:
    return min(n_exp, T - n_exp)


def mine_pseudo_neutral(a: np.ndarray, store: PseudoLabelStore) -> PseudoLabelStore:
    """Flag the ``min(N_exp, T - N_exp)`` unlabeled frames with the lowest intensity."""
    free = np.flatnonzero(~store.expression_mask)
    k = neutral_count(store.n_exp, store.T)
    neutral = np.zeros(store.T, dtype=bool)
    if k > 0:
        # stable sort keeps earlier frames first among equal scores
        order = np.argsort(np.asarray(a)[free], kind="stable")
        neutral[free[order[:k]]] = True
    store.neutral_flag = neutral
    return store


def _fixed_window_instances(video, X, half_widths, soft, cfg):
    out = []
    T = video.T
    for pt in video.points:
        K = clamp_window(pt.p, half_widths[pt.cls], T)
        mu = X[pt.p].copy()
        sigma = _sigma_over(X, mu, K, cfg.sigma_floor) if soft else 1.0
        g = InstanceGaussian(pt.p, mu, sigma, K, pt.cls)
        out.append((g, assign_soft_labels(g, X, hard=not soft)))
    return out


def build_epoch_labels(
    video: VideoSample,
    X: np.ndarray,
    a: np.ndarray,
    stage: int,
    cfg: GimConfig,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
    rng: np.random.Generator | None = None,
    theta: float | None = None,
) -> PseudoLabelStore:
    """Pseudo-labels for one video at one epoch of the given training stage.

    Stage 1 puts hard labels on ``p +/- k_s1``; stage 2 a Gaussian centred
    on the point over ``p +/- k_s2``; stage 3 runs the full apex/duration/fit
    procedure with ``theta`` (defaults to ``cfg.theta``).
    """
    T, C = video.T, len(classes)
    if rng is None:
        rng = np.random.default_rng(0)
    if not video.points:
        logger.debug("video %s has no point labels; no expression labels emitted", video.id)
        return mine_pseudo_neutral(a, PseudoLabelStore.empty(C, T))

    if stage == 1:
        instances = _fixed_window_instances(video, X, cfg.k_s1, soft=False, cfg=cfg)
    elif stage == 2:
        instances = _fixed_window_instances(video, X, cfg.k_s2, soft=cfg.label_mode == "soft", cfg=cfg)
    elif stage == 3:
        theta = cfg.theta if theta is None else theta
        instances = []
        for pt in video.points:
            k_c = classes[pt.cls].general_duration
            apex = detect_pseudo_apex(a, pt.p, k_c)
            L = estimate_duration(a, apex, k_c, theta)
            g = fit_instance_gaussian(X, apex, L, cfg.delta, cfg, pt.cls)
            instances.append((g, assign_soft_labels(g, X, hard=cfg.label_mode == "hard")))
    else:
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")

    store = resolve_overlaps(instances, cfg.overlap_strategy, C, T, rng)
    return mine_pseudo_neutral(a, store)
