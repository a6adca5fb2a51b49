"""Blockage predictors: the CNN+ViT+GRU model, the box baseline, training, estimators."""
from .config import DESK, DESK_TRAIN, PAPER, PAPER_TRAIN, ModelConfig, TrainConfig, model_preset, train_preset
from .estimators import (
    BlockagePredictor,
    BoxBaselinePredictor,
    detect,
    pack_baseline,
    pack_proposed,
    unpack_baseline,
    unpack_proposed,
)
from .networks import (
    BaselineModel,
    CNNBranch,
    GRUHead,
    ProposedModel,
    ViTBranch,
    box_features,
    encode_beams,
    extract_patches,
    parameter_count,
)
from .training import History, TrainingDivergedError, evaluate, predict_proba, train_model

__all__ = [
    "DESK", "DESK_TRAIN", "PAPER", "PAPER_TRAIN", "BaselineModel", "BlockagePredictor", "BoxBaselinePredictor",
    "CNNBranch", "GRUHead", "History", "ModelConfig", "ProposedModel", "TrainConfig", "TrainingDivergedError",
    "ViTBranch", "box_features", "detect", "encode_beams", "evaluate", "extract_patches", "model_preset",
    "pack_baseline", "pack_proposed", "parameter_count", "predict_proba", "train_model", "train_preset",
    "unpack_baseline", "unpack_proposed",
]
