"""Training loop, label normalisation, splits, pretraining and checkpoint I/O."""

from .data import LabelNormalizer, SampleCache, Samples, sensor_seed, split_counts, split_dataset
from .io import load_model, save_model, sidecar_path
from .loop import (HISTORY_COLUMNS, EvalResult, TrainPlan, TrainResult, evaluate_mae, history_csv, mae,
                   predict, train)
from .pretrain import finetune_params, pretrain

__all__ = [
    "HISTORY_COLUMNS", "EvalResult", "LabelNormalizer", "SampleCache", "Samples", "TrainPlan",
    "TrainResult", "evaluate_mae", "finetune_params", "history_csv", "load_model", "mae", "predict",
    "pretrain", "save_model", "sensor_seed", "sidecar_path", "split_counts", "split_dataset", "train",
]
