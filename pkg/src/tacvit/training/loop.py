"""Minibatch training with freeze scheduling and best-validation model selection."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ..config import Settings
from ..errors import EmptyInputError, NumericError
from ..numcore import Adam, GradTape, Tensor, mse_loss
from ..models import ModelParams, freeze_schedule
from ..sim.labels import TARGETS
from .data import LabelNormalizer, Samples

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_mse", "val_mse", *(f"val_mae_{t.lower()}" for t in TARGETS), "trainable")


class Model(Protocol):
    def forward(self, params: ModelParams, images) -> Tensor: ...


@dataclass
class TrainPlan:
    """Everything the loop needs besides the model and the data."""

    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_wd: bool = True
    seed: int = 0
    schedule: tuple | None = None      # None: every parameter stays as it is

    @classmethod
    def for_family(cls, settings: Settings, family: str, seed: int, schedule=None) -> "TrainPlan":
        o, t = settings.optimizer, settings.train
        lr, wd = (o.vit_lr, o.vit_weight_decay) if family == "tacvit" else (o.cnn_lr, o.cnn_weight_decay)
        return cls(t.epochs, t.batch_size, lr, wd, o.beta1, o.beta2, o.eps, o.decoupled_wd, seed, schedule)


@dataclass
class EvalResult:
    mae: np.ndarray          # (6,) physical units
    pred: np.ndarray         # (n, 6) physical
    truth: np.ndarray        # (n, 6) physical
    mse_norm: float          # mean squared error in normalised units

    def as_dict(self) -> dict[str, float]:
        return {t: float(v) for t, v in zip(TARGETS, self.mae)}


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def mae(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if len(truth) == 0:
        return np.full(truth.shape[1] if truth.ndim == 2 else len(TARGETS), np.nan)
    return np.abs(pred - truth).mean(axis=0)


def predict(model: Model, params: ModelParams, images: np.ndarray, batch: int = 64) -> np.ndarray:
    """Raw (normalised) model outputs, no gradient recording."""
    outs = [model.forward(params, Tensor(images[i:i + batch])).data for i in range(0, len(images), batch)]
    return np.concatenate(outs).astype(np.float64) if outs else np.zeros((0, len(TARGETS)))


def evaluate_mae(model: Model, params: ModelParams, samples: Samples,
                 normalizer: LabelNormalizer | None = None, batch: int = 64) -> EvalResult:
    norm = normalizer or LabelNormalizer.from_ranges()
    raw = predict(model, params, samples.images, batch)
    pred = norm.denormalize(raw)
    truth = np.asarray(samples.targets, dtype=np.float64)
    mse = float(((raw - norm.normalize(truth)) ** 2).mean()) if len(truth) else float("nan")
    return EvalResult(mae(pred, truth), pred, truth, mse)


def train(model: Model, train_set: Samples, val_set: Samples, plan: TrainPlan, params: ModelParams,
          normalizer: LabelNormalizer | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on per-element MSE of normalised targets; returns the best-validation parameters.

    Batches are reshuffled every epoch from ``plan.seed``. When ``plan.schedule``
    is given, frozen flags are reset from it at the start of each (0-based)
    epoch. Model selection uses validation MSE in normalised units, falling back
    to training MSE when the validation set is empty.
    """
    if len(train_set) == 0:
        raise EmptyInputError("training set is empty")
    norm = normalizer or LabelNormalizer.from_ranges()
    y_all = norm.normalize(train_set.targets)
    rng = np.random.default_rng(plan.seed)
    opt = Adam(plan.lr, plan.beta1, plan.beta2, plan.eps, plan.weight_decay, plan.decoupled_wd)
    n, bs = len(train_set), plan.batch_size
    result = TrainResult(params)
    best_score, best_state = np.inf, None

    for epoch in range(plan.epochs):
        if plan.schedule is not None:
            freeze_schedule(params, epoch, plan.schedule)
        perm = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            rows = perm[start:start + bs]
            try:
                with GradTape() as tape:
                    pred = model.forward(params, Tensor(train_set.images[rows]))
                    loss = mse_loss(pred, Tensor(y_all[rows], dtype=pred.data.dtype))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"loss is {value}")
                tape.backward(loss)
                opt.step(params.tensors)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch + 1}, batch {b + 1} "
                                   f"(lr={plan.lr:g}): {exc}") from exc
            total += value * len(rows)
            result.steps += 1
        try:
            ev = evaluate_mae(model, params, val_set, norm) if len(val_set) else None
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch + 1}, validation pass "
                               f"(lr={plan.lr:g}): {exc}") from exc
        row = {"epoch": epoch + 1, "train_mse": total / n,
               "val_mse": ev.mse_norm if ev else float("nan"),
               **{f"val_mae_{t.lower()}": (float(ev.mae[k]) if ev else float("nan")) for k, t in enumerate(TARGETS)},
               "trainable": params.num_params(trainable_only=True)}
        result.history.append(row)
        score = ev.mse_norm if ev else row["train_mse"]
        if score < best_score:
            best_score, best_state, result.best_epoch = score, params.state_dict(), epoch + 1
        log.info("epoch %d train_mse %.5f val_mse %.5f val_mae_z %.4f", epoch + 1, row["train_mse"],
                 row["val_mse"], row["val_mae_z"])
        if on_epoch:
            on_epoch(row)

    if best_state is not None:
        params.load_state_dict(best_state)
    return result


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(HISTORY_COLUMNS) + "\n")
    for row in history:
        buf.write(",".join(repr(float(row[c])) if isinstance(row[c], float) else str(row[c]) for c in HISTORY_COLUMNS) + "\n")
    return buf.getvalue()
