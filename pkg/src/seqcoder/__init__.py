"""Desk-scale neural sequence-modeling toolkit for automated disease coding:
LM pretraining, auxiliary training, attention-pooling multi-label
classification, cross-hospital evaluation, and gradient-times-input
interpretation."""

__version__ = "0.1.0"

from .model import Model, ModelConfig, desk_config, paper_config  # noqa: F401
from .tensor import Tape, Tensor  # noqa: F401
