"""Three-stage training loop: hard labels, fixed Gaussians, then full GIM."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DEFAULT_CLASSES, ExpressionClass, VideoSample
from .gim import GimConfig, build_epoch_labels
from .losses import TERMS, LossWeights, mine_apex_samples, total_loss
from .model import PARAM_NAMES, ModelParams, backward, forward, init_params, save_checkpoint

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "stage", "strategy", "theta", *TERMS, "total")
STRATEGY_NAMES = {1: "hard_window", 2: "point_gaussian", 3: "gim"}


class NumericError(RuntimeError):
    def __init__(self, epoch, video_id, term, value):
        super().__init__(f"non-finite {term} loss ({value}) at epoch {epoch}, video {video_id}")
        self.epoch, self.video_id, self.term = epoch, video_id, term


@dataclass
class TrainConfig:
    n1: int = 1
    n2: int = 4
    n3: int = 95
    lr: float = 2e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    theta_start: float = 0.8
    theta_end: float = 0.5
    theta_ramp: int = 30
    m_c: tuple[int, ...] = (2, 1)
    m_neut: int = 6
    embed_dim: int = 32
    hidden_dim: int = 16
    seed: int = 0
    gim: GimConfig = field(default_factory=GimConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.m_c = tuple(int(m) for m in self.m_c)
        if min(self.n1, self.n2, self.n3) < 0:
            raise ValueError("stage epoch counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.theta_start < self.theta_end:
            raise ValueError("theta_start must be >= theta_end")
        if not (0 < self.theta_end and self.theta_start < 1):
            raise ValueError("theta schedule must stay inside (0, 1)")
        if self.theta_ramp < 0:
            raise ValueError("theta_ramp must be >= 0")

    @property
    def epochs(self) -> int:
        return self.n1 + self.n2 + self.n3

    def stage_of(self, epoch: int) -> int:
        if epoch < self.n1:
            return 1
        if epoch < self.n1 + self.n2:
            return 2
        return 3


def theta_at_epoch(stage3_epoch: int, cfg: TrainConfig) -> float:
    """Duration threshold for the given epoch counted from the start of stage 3."""
    if cfg.theta_ramp == 0 or stage3_epoch >= cfg.theta_ramp:
        return cfg.theta_end
    frac = max(stage3_epoch, 0) / cfg.theta_ramp
    return cfg.theta_start + (cfg.theta_end - cfg.theta_start) * frac


class AdamW:
    """Adaptive moments with bias correction and decoupled weight decay."""

    def __init__(self, params: ModelParams, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.beta1, self.beta2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in PARAM_NAMES:
            p, g = params.tensors[name], grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(params, video, cfg: TrainConfig, stage, theta, rng, classes=DEFAULT_CLASSES):
    """Labels, losses and gradients for one video; parameters are not touched."""
    tracks = forward(params, video.features)
    store = build_epoch_labels(video, tracks.X, tracks.a, stage, cfg.gim, classes, rng=rng, theta=theta)
    sets = mine_apex_samples(store, cfg.m_c, cfg.m_neut)
    value, terms, up = total_loss(tracks, store, sets, cfg.loss)
    grads = backward(params, video.features, tracks, ga=up["a"], gS=up["S"], gf=up["f"])
    return value, terms, grads, store


def train(
    dataset: Sequence[VideoSample],
    cfg: TrainConfig,
    classes: Sequence[ExpressionClass] = DEFAULT_CLASSES,
    out_dir=None,
    params: ModelParams | None = None,
    save_every: int = 0,
) -> tuple[ModelParams, list[dict]]:
    """Train on ``dataset``; returns final parameters and per-epoch log rows.

    With ``out_dir`` the stage-boundary checkpoints, ``ckpt_final.bin`` and
    ``train_log.csv`` are written there, plus ``ckpt_epoch{N}.bin`` every
    ``save_every`` epochs when that is positive.
    """
    if not dataset:
        raise ValueError("empty training set")
    if not any(v.points for v in dataset):
        raise ValueError("training needs at least one video with point labels")
    D = dataset[0].D
    if any(v.D != D for v in dataset):
        raise ValueError("all videos must share the feature width")
    for v in dataset:
        if not v.points:
            logger.warning("video %s has no point labels; only label-free losses apply", v.id)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if params is None:
        params = init_params(D, cfg.embed_dim, cfg.hidden_dim, len(classes), cfg.seed)
    opt = AdamW(params, cfg.lr, cfg.weight_decay, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    order_rng = np.random.default_rng([cfg.seed, 11])
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        stage = cfg.stage_of(epoch)
        theta = theta_at_epoch(epoch - cfg.n1 - cfg.n2, cfg) if stage == 3 else None
        sums = dict.fromkeys((*TERMS, "total"), 0.0)
        for idx in order_rng.permutation(len(dataset)):
            video = dataset[idx]
            label_rng = np.random.default_rng([cfg.seed, epoch, int(idx)])
            value, terms, grads, _ = train_step(params, video, cfg, stage, theta, label_rng, classes)
            for name in TERMS:
                if not np.isfinite(terms[name]):
                    raise NumericError(epoch, video.id, name, terms[name])
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(epoch, video.id, "total", value)
            opt.step(params, grads)
            for name in TERMS:
                sums[name] += terms[name]
            sums["total"] += value
        row = {"epoch": epoch, "stage": stage, "strategy": STRATEGY_NAMES[stage], "theta": theta}
        row.update({k: v / len(dataset) for k, v in sums.items()})
        log.append(row)
        logger.info("epoch %d stage %d total %.5f gim %.5f", epoch, stage, row["total"], row["gim"])

        boundary = epoch + 1 in (cfg.n1, cfg.n1 + cfg.n2, cfg.epochs)
        if out is not None and boundary:
            save_checkpoint(out / f"ckpt_stage{stage}.bin", params, epoch)
        if out is not None and save_every > 0 and (epoch + 1) % save_every == 0:
            save_checkpoint(out / f"ckpt_epoch{epoch}.bin", params, epoch)

    if out is not None:
        save_checkpoint(out / "ckpt_final.bin", params, "final")
        write_log(out / "train_log.csv", log)
    return params, log


def write_log(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in LOG_FIELDS})
