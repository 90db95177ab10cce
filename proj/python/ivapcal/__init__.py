"""Venn-Abers and temperature-scaling calibration for binary classifier logits."""

from ._core import (
    IoError,
    IvapCalibrator,
    LogitRecord,
    ScoreKind,
    ValidationError,
    auc,
    brier,
    ece,
    evaluate,
    f1_macro,
    fit_pava,
    fit_temperature,
    generate,
    merge,
    planted_temperature,
    predict_naive,
    softmax2,
    softmax_k,
    split,
    transform_scores,
)

__all__ = [
    "IoError",
    "IvapCalibrator",
    "LogitRecord",
    "ScoreKind",
    "ValidationError",
    "auc",
    "brier",
    "ece",
    "evaluate",
    "f1_macro",
    "fit_pava",
    "fit_temperature",
    "generate",
    "merge",
    "planted_temperature",
    "predict_naive",
    "softmax2",
    "softmax_k",
    "split",
    "transform_scores",
]
