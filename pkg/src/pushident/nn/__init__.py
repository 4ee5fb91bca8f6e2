"""Minimal neural-network engine: dense + LSTM layers, BPTT, SGD/Adam."""

from .gradcheck import gradient_check, relative_error
from .layers import LSTM, Dense, fan_in_uniform, orthogonal, sigmoid, softmax, softmax_backward
from .optim import SGD, Adam
from .params import ParameterStore, load_params, save_params

__all__ = [
    "Adam",
    "Dense",
    "LSTM",
    "ParameterStore",
    "SGD",
    "fan_in_uniform",
    "gradient_check",
    "load_params",
    "orthogonal",
    "relative_error",
    "save_params",
    "sigmoid",
    "softmax",
    "softmax_backward",
]
