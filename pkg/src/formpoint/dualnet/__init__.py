"""Dual-level pointer model: config, layers, training and gradient checks."""

from .config import NO_VALUE, ModelConfig, ModelParams, TaskBInstance
from .gradcheck import GradCheckReport, gradient_check, tiny_config
from .model import (
    Batch, PageFeatures, dual_encode, encode_entities, encode_tokens,
    forward_batch, init_params, key_text_feature, pointer_scores, predict,
)
from .train import (
    FeatureCache, TrainHistory, TrainingDiverged, instances_from_documents,
    predict_instances, train,
)

__all__ = [
    "NO_VALUE", "ModelConfig", "ModelParams", "TaskBInstance",
    "GradCheckReport", "gradient_check", "tiny_config",
    "Batch", "PageFeatures", "dual_encode", "encode_entities",
    "encode_tokens", "forward_batch", "init_params", "key_text_feature",
    "pointer_scores", "predict",
    "FeatureCache", "TrainHistory", "TrainingDiverged",
    "instances_from_documents", "predict_instances", "train",
]
