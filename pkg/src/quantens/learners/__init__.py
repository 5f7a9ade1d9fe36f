"""Base learners: LSTM, Decision Transformer, gradient boosting, random forest, logistic."""

from .models import ARCHITECTURES, ShapeMismatch, TrainedModel, hyperparameters, predict, train
from .windows import (
    InsufficientData,
    Prediction,
    Standardizer,
    WindowedDataset,
    apply_standardize,
    assemble_windows,
    standardize,
    windows_at,
)

__all__ = [
    "ARCHITECTURES",
    "InsufficientData",
    "Prediction",
    "ShapeMismatch",
    "Standardizer",
    "TrainedModel",
    "WindowedDataset",
    "apply_standardize",
    "assemble_windows",
    "hyperparameters",
    "predict",
    "standardize",
    "train",
    "windows_at",
]
