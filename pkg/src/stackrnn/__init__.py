"""Recurrent networks augmented with differentiable stacks or doubly-linked
lists, trained with SGD to predict algorithmically generated sequences."""

from .model import Model, ModelConfig, Parameters, StepState, init_params
from .tasks import get_task
from .training import TrainConfig, train_with_restarts

__version__ = "0.1.0"

__all__ = [
    "Model",
    "ModelConfig",
    "Parameters",
    "StepState",
    "TrainConfig",
    "get_task",
    "init_params",
    "train_with_restarts",
]
