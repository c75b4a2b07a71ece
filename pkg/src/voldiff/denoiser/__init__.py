"""Predictors behind all sampling: the exact Gaussian oracle and a toy trainable net."""

from .base import Denoiser, DenoiserInput
from .network import NetConfig, NeuralDenoiser, load_weights, neural_predict, save_weights, slab_stack
from .oracle import OracleGaussianDenoiser, oracle_predict
from .training import TrainConfig, TrainSample, save_loss_trace, train

__all__ = [
    "Denoiser",
    "DenoiserInput",
    "NetConfig",
    "NeuralDenoiser",
    "OracleGaussianDenoiser",
    "TrainConfig",
    "TrainSample",
    "load_weights",
    "neural_predict",
    "oracle_predict",
    "save_loss_trace",
    "save_weights",
    "slab_stack",
    "train",
]
