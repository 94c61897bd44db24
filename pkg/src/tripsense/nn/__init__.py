"""From-scratch dense CNN: layers, the drowsiness net, training, evaluation."""

from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    LeakyReLU,
    MaxPool2,
    ShapeError,
    SoftmaxOutput,
)
from .model import Model, ModelConfigError, drowsiness_net
from .train import TrainConfig, TrainingHistory, cross_entropy, loss_and_gradients, train
from .datasets import (
    build_scenario_dataset,
    load_dataset,
    load_frames,
    merge_groups,
    save_dataset,
    save_frames,
    split_groups,
)
from .classify import (
    AccuracyTable,
    CnnClassifier,
    EyeRegionBaseline,
    FrameClassifier,
    evaluate,
)

__all__ = [
    "AccuracyTable",
    "CnnClassifier",
    "Conv2D",
    "Dense",
    "Dropout",
    "EyeRegionBaseline",
    "Flatten",
    "FrameClassifier",
    "LeakyReLU",
    "MaxPool2",
    "Model",
    "ModelConfigError",
    "ShapeError",
    "SoftmaxOutput",
    "TrainConfig",
    "TrainingHistory",
    "build_scenario_dataset",
    "drowsiness_net",
    "cross_entropy",
    "evaluate",
    "load_dataset",
    "load_frames",
    "loss_and_gradients",
    "merge_groups",
    "save_dataset",
    "save_frames",
    "split_groups",
    "train",
]
