"""Gradual unfreezing for LoRA fine-tuning."""

from __future__ import annotations

from typing import Iterable, Sequence

from ..errors import ConfigError
from .params import ModelParams

ALWAYS_TRAINABLE = ("head.",)


def _always(name: str) -> bool:
    return name.startswith(ALWAYS_TRAINABLE) or ".lora." in name


def _matches(name: str, prefix: str) -> bool:
    return name == prefix or name.startswith(prefix if prefix.endswith(".") else prefix + ".")


def validate_schedule(params: ModelParams, schedule: Sequence[tuple[int, Iterable[str]]]) -> None:
    for epoch, prefixes in schedule:
        if epoch < 0:
            raise ConfigError(f"freeze schedule: negative epoch {epoch}")
        for p in prefixes:
            if not any(_matches(n, p) for n in params):
                raise ConfigError(f"freeze schedule: prefix {p!r} matches no parameter")


def trainable_at(params: ModelParams, epoch: int, schedule) -> set[str]:
    open_prefixes = [p for e, prefixes in schedule if e <= epoch for p in prefixes]
    return {n for n in params if _always(n) or any(_matches(n, p) for p in open_prefixes)}


def freeze_schedule(params: ModelParams, epoch: int, schedule) -> set[str]:
    """Set frozen flags for (0-based) ``epoch``; returns the trainable names.

    Trainable = regression head + LoRA adapters + every prefix whose trigger
    epoch is <= ``epoch``. Since triggers only accumulate, the trainable set
    never shrinks as ``epoch`` grows.
    """
    validate_schedule(params, schedule)
    keep = trainable_at(params, epoch, schedule)
    for n, t in params.items():
        t.requires_grad = n in keep
    return keep
