"""Desk-scale model-zoo laboratory.

Generate structured populations of small MLP classifiers (pretrain, then
fine-tune over a grid of generating factors), measure their diversity,
recover lineage trees from weights and experiment with weight averaging.
"""

from .errors import ZooLabError
from .tensor import (
    ModelCheckpoint,
    NamedTensor,
    WeightVector,
    flatten_weights,
    l2_distance,
    load_checkpoint,
    rng_for,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "ModelCheckpoint",
    "NamedTensor",
    "WeightVector",
    "ZooLabError",
    "flatten_weights",
    "l2_distance",
    "load_checkpoint",
    "rng_for",
    "save_checkpoint",
]
