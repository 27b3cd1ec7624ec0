"""Weakly supervised clickbait detection on top of the C++ core."""

from baitnet._core import (
    DataError,
    Forest,
    Model,
    NumericError,
    UsageError,
    decide_class,
    gate_inference,
    gaussian_smooth,
    gumbel_gate,
    load_model,
    node_entropy,
    normalize,
    split_entropy,
    train_model,
)

__all__ = [
    "DataError",
    "Forest",
    "Model",
    "NumericError",
    "UsageError",
    "decide_class",
    "gate_inference",
    "gaussian_smooth",
    "gumbel_gate",
    "load_model",
    "node_entropy",
    "normalize",
    "split_entropy",
    "train_model",
]
