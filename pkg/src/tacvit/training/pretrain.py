"""Encoder self-pretraining and LoRA fine-tuning setup for TacViT."""

from __future__ import annotations

import logging

from ..config import Settings
from ..errors import ConfigError
from ..models import ModelParams, ModelSpec, attach_lora
from ..models.freeze import validate_schedule
from ..sim.dataset import SensorData
from .data import SampleCache, split_dataset
from .loop import TrainPlan, TrainResult, train

log = logging.getLogger(__name__)


def pretrain(settings: Settings, corpus: SensorData, seed: int) -> TrainResult:
    """Train a full TacViT (encoder and head) on a randomized-profile corpus.

    Stands in for large-scale generic pretraining: the corpus mixes many
    random sensor appearances, so the encoder learns marker-displacement
    features that are not tied to one sensor. The head is kept in the
    checkpoint so fine-tuning starts from a working regressor.
    """
    spec = ModelSpec.from_settings("tacvit", settings)
    p = settings.pretrain
    if not 0.0 < p.val_fraction < 1.0:
        raise ConfigError(f"pretrain.val_fraction must be in (0, 1), got {p.val_fraction}")
    sid = corpus.sensor_id
    train_idx, val_idx = split_dataset({sid: corpus}, 1.0 - p.val_fraction, seed)
    cache = SampleCache({sid: corpus}, spec.image_size, spec.channels,
                        settings.data.resize_mode, settings.data.pixel_norm)
    plan = TrainPlan(p.epochs, settings.train.batch_size, p.lr, p.weight_decay, settings.optimizer.beta1,
                     settings.optimizer.beta2, settings.optimizer.eps, settings.optimizer.decoupled_wd, seed)
    params = spec.init(seed)
    return train(spec, cache.gather(train_idx), cache.gather(val_idx), plan, params)


def finetune_params(settings: Settings, base: ModelParams | None, seed: int) -> tuple[ModelParams, tuple | None]:
    """Initial TacViT parameters and freeze schedule for one run.

    With a base checkpoint: copy it, attach zero-initialised LoRA adapters,
    freeze the encoder and return the gradual-unfreezing schedule. Without
    one (or with ``train.scratch_vit``): random init, everything trainable.
    """
    spec = ModelSpec.from_settings("tacvit", settings)
    if base is None or settings.train.scratch_vit:
        return spec.init(seed), None
    params = base.copy()
    expected = spec.init(0)
    missing = set(expected) - set(params)
    if missing:
        raise ConfigError(f"base checkpoint does not match vit settings; missing {sorted(missing)[:3]}")
    for n in expected:
        if params[n].shape != expected[n].shape:
            raise ConfigError(f"base checkpoint tensor {n} has shape {params[n].shape}, "
                              f"settings imply {expected[n].shape}")
    attach_lora(params, settings.vit, settings.lora, seed)
    schedule = settings.train.schedule
    validate_schedule(params, schedule)
    return params, schedule
