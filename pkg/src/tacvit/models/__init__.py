"""Model families (TacViT, CNN), LoRA adapters and freeze scheduling."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..config import CnnConfig, LoraConfig, Settings, VitConfig
from ..errors import ConfigError
from ..numcore import Tensor
from .cnn import cnn_forward, cnn_param_count, init_cnn
from .freeze import freeze_schedule, trainable_at
from .lora import LoraAdapter, attach_lora, collect_adapters, lora_apply, merge_lora
from .params import ModelParams
from .vit import attention, init_vit, patchify, unpatchify, vit_forward, vit_param_count

FAMILIES = ("cnn", "tacvit")


@dataclass
class ModelSpec:
    """Architecture description for either family; fully expressed by Settings keys."""

    family: str
    vit: VitConfig = field(default_factory=VitConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r} (cnn | tacvit)")

    @classmethod
    def from_settings(cls, family: str, s: Settings) -> "ModelSpec":
        return cls(family, s.vit, s.cnn, s.lora)

    @property
    def image_size(self) -> int:
        return self.vit.image_size if self.family == "tacvit" else self.cnn.image_size

    @property
    def channels(self) -> int:
        return self.vit.channels if self.family == "tacvit" else self.cnn.channels

    def init(self, seed: int) -> ModelParams:
        return init_vit(self.vit, seed) if self.family == "tacvit" else init_cnn(self.cnn, seed)

    def param_count(self) -> int:
        return vit_param_count(self.vit) if self.family == "tacvit" else cnn_param_count(self.cnn)

    def forward(self, params: ModelParams, images) -> Tensor:
        if self.family == "cnn":
            return cnn_forward(images, params, self.cnn)
        adapters = collect_adapters(params, self.vit, self.lora)
        return vit_forward(images, params, self.vit, adapters or None)


__all__ = [
    "FAMILIES", "LoraAdapter", "ModelParams", "ModelSpec", "attach_lora", "attention",
    "cnn_forward", "collect_adapters", "freeze_schedule", "init_cnn", "init_vit",
    "lora_apply", "merge_lora", "patchify", "trainable_at", "unpatchify", "vit_forward",
]
