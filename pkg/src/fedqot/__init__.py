"""Federated averaging between a training coordinator and edge contributor nodes.

The demonstration task is binary quality-of-transmission classification of
optical lightpaths spread over several network domains.
"""
from .fedavg import Hyperparams, aggregate, centralized_train, close_round, ecn_update, run_training
from .kernels import BACKEND
from .nn import (ModelSpec, ParameterVector, deserialize_params, evaluate_accuracy, forward, init_params,
                 loss_and_grad, serialize_params, sgd_step)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Hyperparams", "ModelSpec", "ParameterVector", "aggregate", "centralized_train", "close_round",
    "deserialize_params", "ecn_update", "evaluate_accuracy", "forward", "init_params", "loss_and_grad",
    "run_training", "serialize_params", "sgd_step",
]
