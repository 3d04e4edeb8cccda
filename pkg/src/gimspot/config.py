"""Sectioned ``key = value`` run configuration.

One file configures every stage; unknown sections or keys are rejected.
Tuple-valued keys take comma-separated values, e.g. ``k_s1 = 5, 3``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import make_classes
from .gim import GimConfig
from .inference import InferConfig
from .losses import LossWeights
from .synth import SynthConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ClassConfig:
    mae_duration: int = 32
    mae_min_len: int = 16
    mae_max_len: int = 120
    me_duration: int = 16
    me_min_len: int = 3
    me_max_len: int = 15

    def build(self):
        return make_classes(
            self.mae_duration, self.mae_min_len, self.mae_max_len, self.me_duration, self.me_min_len, self.me_max_len
        )


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    mode: str = "pooled"

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.mode not in ("pooled", "per_video"):
            raise ValueError("mode must be 'pooled' or 'per_video'")


@dataclass
class RunSection:
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


# section -> (dataclass, keys owned elsewhere)
SECTIONS: dict[str, tuple[type, tuple[str, ...]]] = {
    "run": (RunSection, ()),
    "synth": (SynthConfig, ("seed",)),
    "classes": (ClassConfig, ()),
    "gim": (GimConfig, ()),
    "train": (TrainConfig, ("seed", "gim", "loss")),
    "loss": (LossWeights, ()),
    "infer": (InferConfig, ()),
    "eval": (EvalConfig, ()),
}

HELP = {
    "run.seed": "single seed for data generation, parameter init, video order and label sampling",
    "run.jobs": "worker processes for per-video work in gen/infer/eval",
    "synth.videos": "number of videos",
    "synth.T": "frames per video",
    "synth.D": "feature width",
    "synth.mae_count": "min, max MaE instances per video",
    "synth.me_count": "min, max ME instances per video",
    "synth.mae_half": "min, max MaE half-length (instance spans 2h+1 frames)",
    "synth.me_half": "min, max ME half-length",
    "synth.mae_amplitude": "MaE peak amplitude range",
    "synth.me_amplitude": "ME peak amplitude range",
    "synth.noise": "background noise std",
    "synth.burst_rate": "expected neutral bursts per frame",
    "synth.burst_amplitude": "neutral burst amplitude range",
    "synth.burst_duration": "neutral burst duration range (frames, <= 2)",
    "synth.min_gap": "minimum frames between planted instances",
    "synth.annotation_sigma": "point annotation std as a fraction of instance length",
    "synth.extent_fraction": "profile level, relative to the peak, at which onset/offset are recorded",
    "synth.train_fraction": "share of videos in the train split",
    "synth.annotation_seed": "seed of the point-annotation draw (defaults to run.seed)",
    "classes.mae_duration": "general MaE duration k_c (frames)",
    "classes.mae_min_len": "shortest MaE proposal",
    "classes.mae_max_len": "longest MaE proposal",
    "classes.me_duration": "general ME duration k_c (frames)",
    "classes.me_min_len": "shortest ME proposal",
    "classes.me_max_len": "longest ME proposal",
    "gim.theta": "duration threshold used outside the training schedule (e.g. dump)",
    "gim.delta": "duration expansion coefficient",
    "gim.sigma_floor": "lower bound on the Gaussian spread",
    "gim.k_s1": "stage-1 hard-label half-width per class (MaE, ME)",
    "gim.k_s2": "stage-2 soft-label half-width per class (MaE, ME)",
    "gim.overlap_strategy": "same-class overlap resolution: random | higher | lower",
    "gim.label_mode": "soft Gaussian labels or hard 1.0 labels on the fitted range",
    "train.n1": "stage-1 epochs",
    "train.n2": "stage-2 epochs",
    "train.n3": "stage-3 epochs",
    "train.lr": "learning rate",
    "train.weight_decay": "decoupled weight decay",
    "train.beta1": "first-moment decay",
    "train.beta2": "second-moment decay",
    "train.adam_eps": "optimizer epsilon",
    "train.theta_start": "duration threshold at the first stage-3 epoch",
    "train.theta_end": "duration threshold after the ramp",
    "train.theta_ramp": "stage-3 epochs over which theta decreases linearly",
    "train.m_c": "positive apex neighbourhood per class (MaE, ME)",
    "train.m_neut": "negative neighbourhood around neutral/reliable frames",
    "train.embed_dim": "trunk embedding width",
    "train.hidden_dim": "branch hidden width",
    "loss.lambda_smooth": "weight of the temporal smoothness loss",
    "loss.lambda_norm": "weight of the L1 sparsity loss",
    "loss.lambda_iac": "weight of the intensity-aware contrastive loss (0 disables it)",
    "loss.tau": "contrastive temperature",
    "loss.alpha": "focal-loss positive weight",
    "loss.gamma": "focal-loss focusing exponent",
    "loss.symmetric_focal": "apply s**gamma to the negative focal term",
    "loss.norm_reduction": "sum | mean reduction of the L1 sparsity loss",
    "loss.intensity_aware": "false uses unit pair weights (plain supervised contrast)",
    "infer.thresholds": "intensity thresholds for segment extraction",
    "infer.apex_class_threshold": "apex score needed to emit a class",
    "infer.nms_method": "hard | linear | gaussian",
    "infer.iou_threshold": "IoU above which NMS acts (hard, linear)",
    "infer.nms_sigma": "gaussian NMS decay",
    "infer.score_floor": "proposals scoring below this after decay are dropped",
    "infer.class_score": "apex (S only) | fused (S times intensity at the apex)",
    "eval.iou_threshold": "IoU needed for a true positive",
    "eval.mode": "pooled | per_video",
}


def _fields(section: str):
    cls, skip = SECTIONS[section]
    return [f for f in dataclasses.fields(cls) if f.name not in skip]


def _default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()  # type: ignore[misc]


def _coerce(raw: str, default: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        if default is None:
            return None if raw.lower() in ("", "none") else int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    classes: ClassConfig = field(default_factory=ClassConfig)
    gim: GimConfig = field(default_factory=GimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=self.run.seed)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.run.seed, gim=self.gim, loss=self.loss)

    def class_set(self):
        return self.classes.build()

    def to_ini(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            obj = getattr(self, section)
            for f in _fields(section):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                lines.append(f"{f.name} = {'' if value is None else value}")
            lines.append("")
        return "\n".join(lines)


def build_config(values: dict[str, dict[str, str]]) -> RunConfig:
    """Build a validated RunConfig from ``{section: {key: raw string}}``."""
    for section, keys in values.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        known = {f.name for f in _fields(section)}
        for key in keys:
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
    parts = {}
    for section, (cls, _) in SECTIONS.items():
        kwargs = {}
        for f in _fields(section):
            if f.name in values.get(section, {}):
                kwargs[f.name] = _coerce(values[section][f.name], _default(f), f"{section}.{f.name}")
        try:
            parts[section] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            bad = ", ".join(f"{section}.{k}" for k in kwargs) or section
            raise ConfigError(f"[{section}] invalid ({bad}): {exc}") from exc
    cfg = RunConfig(**parts)
    try:
        cfg.class_set()
    except ValueError as exc:
        raise ConfigError(f"[classes] {exc}") from exc
    if len(cfg.gim.k_s1) != 2 or len(cfg.gim.k_s2) != 2 or len(cfg.train.m_c) != 2:
        raise ConfigError("gim.k_s1, gim.k_s2 and train.m_c need one value per class (MaE, ME)")
    return cfg


def parse_overrides(items) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.setdefault(section, {})[key] = value
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (e.g. synth.T)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        values = {s: dict(parser.items(s)) for s in parser.sections()}
    for section, keys in (overrides or {}).items():
        values.setdefault(section, {}).update(keys)
    return build_config(values)


def config_reference() -> str:
    """Markdown table of every configuration key with its default."""
    out = ["# Configuration reference", ""]
    out.append("Plain-text file with `[section]` headers and `key = value` lines.")
    out.append("Tuples are comma-separated. Any key can be overridden with `--set section.key=value`.")
    out.append("")
    for section in SECTIONS:
        out += [f"## [{section}]", "", "| key | default | meaning |", "|---|---|---|"]
        for f in _fields(section):
            d = _default(f)
            if isinstance(d, tuple):
                d = ", ".join(str(v) for v in d)
            out.append(f"| `{f.name}` | `{d}` | {HELP.get(f'{section}.{f.name}', '')} |")
        out.append("")
    return "\n".join(out)


def write_default_config(path) -> None:
    Path(path).write_text(RunConfig().to_ini())
