"""Generalized random forests: forest-weighted local estimating equations."""

from .centering import center
from .data import ColumnRoles, Dataset, load_csv, write_csv
from .errors import ForestError
from .forest import (
    Forest,
    ForestOptions,
    compute_weights,
    load_forest,
    predict,
    predict_many,
    predict_oob,
    save_forest,
    train_forest,
)
from .inference import confidence_interval, variance_at
from .models import MomentModel, ParameterEstimate
from .tree import SplitOptions

__all__ = [
    "ColumnRoles",
    "Dataset",
    "Forest",
    "ForestError",
    "ForestOptions",
    "MomentModel",
    "ParameterEstimate",
    "SplitOptions",
    "center",
    "compute_weights",
    "confidence_interval",
    "load_csv",
    "load_forest",
    "predict",
    "predict_many",
    "predict_oob",
    "save_forest",
    "train_forest",
    "variance_at",
    "write_csv",
]
