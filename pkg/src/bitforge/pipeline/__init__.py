from bitforge.pipeline.cascade import cascade_infer, evaluate, plane_accuracy, predict_plane
from bitforge.pipeline.config import ConfigError, TrainConfig, parse_config
from bitforge.pipeline.synth import SynthSpec, synth_dataset
from bitforge.pipeline.train import TrainingDiverged, pretrain_sr, train_submodel

__all__ = [
    "ConfigError",
    "SynthSpec",
    "TrainConfig",
    "TrainingDiverged",
    "cascade_infer",
    "evaluate",
    "parse_config",
    "plane_accuracy",
    "predict_plane",
    "pretrain_sr",
    "synth_dataset",
    "train_submodel",
]
