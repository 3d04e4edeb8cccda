"""Synthetic per-frame feature videos with planted expression episodes.

An episode adds ``A * exp(-(t - apex)^2 / (2 s^2)) * u`` to background
noise, ``u`` being a random non-negative unit direction drawn in the channel
group of its class. Because every frame of an episode lies on one ray, the
feature distance to the apex feature is proportional to the intensity drop,
which is exactly the structure the Gaussian pseudo-labels assume. Short
neutral bursts in random directions act as distractors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .core import DEFAULT_CLASSES, GroundTruthInstance, PointLabel, VideoSample, save_video
from .dataset import parallel_map

# default profile value at the recorded onset/offset, relative to the peak;
# at 0.25 an ME boundary sits 2-3.5 noise deviations above the background
EXTENT_FRACTION = 0.25


def _extent_scale(fraction: float) -> float:
    return math.sqrt(2.0 * math.log(1.0 / fraction))


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    videos: int = 50
    T: int = 600
    D: int = 8
    mae_count: tuple[int, int] = (2, 4)
    me_count: tuple[int, int] = (1, 2)
    # half-length h of the recorded extent; the instance spans 2h+1 frames
    mae_half: tuple[int, int] = (12, 19)
    me_half: tuple[int, int] = (2, 5)
    mae_amplitude: tuple[float, float] = (0.8, 1.5)
    me_amplitude: tuple[float, float] = (0.4, 0.7)
    noise: float = 0.05
    burst_rate: float = 0.005
    burst_amplitude: tuple[float, float] = (0.3, 0.6)
    burst_duration: tuple[int, int] = (1, 2)
    min_gap: int = 32
    annotation_sigma: float = 0.1
    extent_fraction: float = EXTENT_FRACTION
    train_fraction: float = 0.8
    seed: int = 0
    annotation_seed: int | None = None

    def __post_init__(self):
        for name in ("mae_count", "me_count", "mae_half", "me_half", "burst_duration"):
            lo, hi = (int(x) for x in getattr(self, name))
            if not 0 <= lo <= hi:
                raise SynthError(f"{name}: need 0 <= low <= high")
            setattr(self, name, (lo, hi))
        for name in ("mae_amplitude", "me_amplitude", "burst_amplitude"):
            lo, hi = (float(x) for x in getattr(self, name))
            if not 0 <= lo <= hi:
                raise SynthError(f"{name}: need 0 <= low <= high")
            setattr(self, name, (lo, hi))
        if self.videos < 0:
            raise SynthError("videos must be >= 0")
        if self.T <= 0:
            raise SynthError("T must be positive")
        if self.D < 2:
            raise SynthError("D must be >= 2")
        if self.noise < 0 or self.annotation_sigma < 0 or self.burst_rate < 0:
            raise SynthError("noise, annotation_sigma and burst_rate must be >= 0")
        if not 0 <= self.train_fraction <= 1:
            raise SynthError("train_fraction must lie in [0, 1]")
        if not 0 < self.extent_fraction < 1:
            raise SynthError("extent_fraction must lie in (0, 1)")
        if self.burst_duration[1] > 2:
            raise SynthError("burst_duration must not exceed 2 frames")

    @property
    def effective_annotation_seed(self) -> int:
        return self.seed if self.annotation_seed is None else self.annotation_seed

    def channel_groups(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.D // 2
        return np.arange(0, half), np.arange(half, self.D)


def _direction(rng, D, channels) -> np.ndarray:
    u = np.zeros(D)
    u[channels] = np.abs(rng.standard_normal(len(channels))) + 1e-3
    return u / np.linalg.norm(u)


def episode_profile(T: int, apex: int, half: int, fraction: float = EXTENT_FRACTION) -> np.ndarray:
    """Unit-peak Gaussian bump reaching ``fraction`` of its peak at ``apex +/- half``."""
    t = np.arange(T)
    if half == 0:
        return (t == apex).astype(float)
    s = half / _extent_scale(fraction)
    return np.exp(-((t - apex) ** 2) / (2 * s * s))


def sample_point_annotation(truth: GroundTruthInstance, sigma_ann: float, rng: np.random.Generator) -> PointLabel:
    """Point label drawn around the apex, std ``sigma_ann * length``, kept inside the instance."""
    scale = sigma_ann * truth.length
    if scale == 0:
        return PointLabel(truth.apex, truth.cls)
    for _ in range(1000):
        p = truth.apex + int(round(rng.normal(0.0, scale)))
        if truth.onset <= p <= truth.offset:
            return PointLabel(p, truth.cls)
    return PointLabel(int(np.clip(p, truth.onset, truth.offset)), truth.cls)


def _place(rng, T, halves, min_gap, max_tries=2000):
    """Non-overlapping apex positions keeping ``min_gap`` frames between extents."""
    placed: list[tuple[int, int]] = []
    for h in halves:
        for _ in range(max_tries):
            apex = int(rng.integers(h, T - h))
            if all(apex - h > q + k + min_gap or apex + h < q - k - min_gap for q, k in placed):
                placed.append((apex, h))
                break
        else:
            raise SynthError(f"cannot place {len(halves)} instances in {T} frames with gap {min_gap}")
    return placed


def generate_video(cfg: SynthConfig, index: int, rng=None, ann_rng=None) -> VideoSample:
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, index])
    ann_rng = ann_rng if ann_rng is not None else np.random.default_rng([cfg.effective_annotation_seed, index, 1])
    T, D = cfg.T, cfg.D
    features = rng.normal(0.0, cfg.noise, size=(T, D)) if cfg.noise > 0 else np.zeros((T, D))
    groups = cfg.channel_groups()
    specs = [(0, cfg.mae_half, cfg.mae_amplitude)] * int(rng.integers(cfg.mae_count[0], cfg.mae_count[1] + 1))
    specs += [(1, cfg.me_half, cfg.me_amplitude)] * int(rng.integers(cfg.me_count[0], cfg.me_count[1] + 1))
    halves = [int(rng.integers(h[0], h[1] + 1)) for _, h, _ in specs]
    placed = _place(rng, T, halves, cfg.min_gap)

    truth = []
    for (cls, _, amp), (apex, h) in zip(specs, placed):
        A = rng.uniform(*amp)
        u = _direction(rng, D, groups[cls])
        features += np.outer(A * episode_profile(T, apex, h, cfg.extent_fraction), u)
        truth.append(GroundTruthInstance(apex - h, apex, apex + h, cls))
    truth.sort(key=lambda g: g.apex)

    covered = np.zeros(T, dtype=bool)
    for g in truth:
        covered[g.onset : g.offset + 1] = True
    for _ in range(int(rng.poisson(cfg.burst_rate * T))):
        dur = int(rng.integers(cfg.burst_duration[0], cfg.burst_duration[1] + 1))
        start = int(rng.integers(0, T - dur + 1))
        amp = rng.uniform(*cfg.burst_amplitude)
        u = _direction(rng, D, np.arange(D))
        if covered[start : start + dur].any():
            continue
        features[start : start + dur] += amp * u

    points = [sample_point_annotation(g, cfg.annotation_sigma, ann_rng) for g in truth]
    return VideoSample(f"vid_{index:03d}", features, points, truth)


def split_ids(ids: list[str], train_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    order = np.random.default_rng([seed, 7]).permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return train, test


def _generate_one(cfg: SynthConfig, index: int) -> VideoSample:
    return generate_video(cfg, index)


def generate_dataset(cfg: SynthConfig, out_dir=None, binary: bool = False, jobs: int = 1):
    """Generate every video and the train/test split.

    With ``out_dir`` the videos go to ``out_dir/videos/<id>.json`` and the
    split to ``out_dir/manifest.json``. Returns ``(videos, manifest)``.
    Each video has its own seed stream, so ``jobs`` never changes the output.
    """
    videos = parallel_map(partial(_generate_one, cfg), range(cfg.videos), jobs)
    train, test = split_ids([v.id for v in videos], cfg.train_fraction, cfg.seed)
    manifest = {"train": train, "test": test, "config_echo": asdict(cfg)}
    if out_dir is not None:
        out = Path(out_dir)
        (out / "videos").mkdir(parents=True, exist_ok=True)
        for v in videos:
            save_video(v, out / "videos" / f"{v.id}.json", DEFAULT_CLASSES, binary=binary)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return videos, manifest
