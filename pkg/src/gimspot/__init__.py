"""Point-supervised facial expression spotting with Gaussian intensity pseudo-labels."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DEFAULT_CLASSES,
    MAE,
    ME,
    DataError,
    ExpressionClass,
    GroundTruthInstance,
    PointLabel,
    VideoSample,
    interval_iou,
)
from .evaluation import evaluate_dataset, match_proposals  # noqa: E402
from .gim import GimConfig, PseudoLabelStore, build_epoch_labels  # noqa: E402
from .inference import InferConfig, Proposal, infer_video  # noqa: E402
from .losses import LossWeights  # noqa: E402
from .model import ModelParams, forward, init_params  # noqa: E402
from .synth import SynthConfig, generate_dataset  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402

__all__ = [
    "DEFAULT_CLASSES",
    "MAE",
    "ME",
    "DataError",
    "ExpressionClass",
    "GimConfig",
    "GroundTruthInstance",
    "InferConfig",
    "LossWeights",
    "ModelParams",
    "PointLabel",
    "Proposal",
    "PseudoLabelStore",
    "SynthConfig",
    "TrainConfig",
    "VideoSample",
    "build_epoch_labels",
    "evaluate_dataset",
    "forward",
    "generate_dataset",
    "infer_video",
    "init_params",
    "interval_iou",
    "match_proposals",
    "train",
]
