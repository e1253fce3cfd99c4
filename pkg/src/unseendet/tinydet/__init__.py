"""Toy single-scale grid detector and its training loop."""

from .checkpoint import FORMAT, load_checkpoint, model_from_dict, model_to_dict, save_checkpoint
from .decode import decode, nms, sigmoid, softmax
from .loss import LAMBDA_COORD, LAMBDA_NOOBJ, assign, build_targets, compute_loss, supervised_anchors, yolo_loss
from .model import (
    ArchConfig,
    DetectorModel,
    class_weight_vector,
    forward,
    forward_tensor,
    init_model,
    param_shapes,
    rename_slot,
    set_class_weight_vector,
    torch_params,
    weight_vector_length,
)
from .train import (
    BASELINE,
    SCOPES,
    UNSEEN,
    TensorData,
    Trainer,
    TrainSchedule,
    as_tensor_data,
    baseline_schedule,
    steps_per_epoch,
    train,
    unseen_schedule,
)

__all__ = [
    "FORMAT", "load_checkpoint", "model_from_dict", "model_to_dict", "save_checkpoint",
    "decode", "nms", "sigmoid", "softmax",
    "LAMBDA_COORD", "LAMBDA_NOOBJ", "assign", "build_targets", "compute_loss", "supervised_anchors", "yolo_loss",
    "ArchConfig", "DetectorModel", "class_weight_vector", "forward", "forward_tensor", "init_model",
    "param_shapes", "rename_slot", "set_class_weight_vector", "torch_params", "weight_vector_length",
    "BASELINE", "SCOPES", "UNSEEN", "TensorData", "Trainer", "TrainSchedule", "as_tensor_data",
    "baseline_schedule", "steps_per_epoch", "train", "unseen_schedule",
]
