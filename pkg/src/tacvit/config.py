"""Run configuration: dataclasses with flat ``section.key=value`` text serialization.

Precedence is built-in profile defaults < config file < command-line overrides.
Every field carries a one-line help string and, where the value comes from the
reference hyperparameter tables, the table row it mirrors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError, StorageError


def _f(default, help: str, ref: str = ""):
    return field(default=default, metadata={"help": help, "ref": ref})


@dataclass
class VitConfig:
    image_size: int = _f(64, "square input resolution in pixels", "ViT table 'Image Resolution' = 224")
    patch_size: int = _f(8, "patch edge P in pixels", "ViT table 'Patch Size' = 16")
    channels: int = _f(1, "input channels (grayscale replicated when > 1)")
    embed_dim: int = _f(64, "token embedding width d", "ViT table 'Embedding Dimension' = 768")
    num_layers: int = _f(4, "transformer encoder blocks", "ViT table 'Number of Transformer Layers' = 12")
    num_heads: int = _f(4, "attention heads per block", "ViT table 'Number of Attention Heads' = 12")
    mlp_hidden: int = _f(128, "encoder feed-forward hidden width", "ViT table 'MLP Hidden Dimension' = 3072")
    head_layers: int = _f(4, "fully connected layers in the regression head", "ViT table 'Number of Regression Layers' = 4")
    head_hidden: tuple = _f((512, 256, 64), "hidden widths of the regression head (head_layers - 1 values)")
    dropout: float = _f(0.0, "dropout probability (only 0 is supported)", "ViT table 'Dropout coefficient' = 0")
    output_dim: int = _f(6, "regression outputs (z, Rx, Ry, Fx, Fy, Fz)")
    pool: str = _f("cls", "pooled representation: cls | mean")
    ln_eps: float = _f(1e-6, "layer-norm epsilon")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def validate(self) -> None:
        if self.image_size % self.patch_size:
            raise ConfigError(f"vit.image_size {self.image_size} not divisible by vit.patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"vit.embed_dim {self.embed_dim} not divisible by vit.num_heads {self.num_heads}")
        if len(self.head_hidden) != self.head_layers - 1:
            raise ConfigError(f"vit.head_hidden needs {self.head_layers - 1} widths, got {len(self.head_hidden)}")
        if self.pool not in ("cls", "mean"):
            raise ConfigError(f"vit.pool must be cls or mean, got {self.pool!r}")
        if self.dropout != 0:
            raise ConfigError("vit.dropout: only 0 is supported")
        if min(self.image_size, self.patch_size, self.channels, self.embed_dim, self.num_layers,
               self.num_heads, self.mlp_hidden, self.head_layers, self.output_dim) < 1:
            raise ConfigError("vit sizes must be positive")


@dataclass
class LoraConfig:
    rank: int = _f(4, "LoRA rank r (must satisfy r <= embed_dim / 4)")
    alpha: float = _f(8.0, "LoRA scaling numerator; adapter output is scaled by alpha / r")
    targets: tuple = _f(("q", "v"), "attention projections that receive adapters (subset of q,k,v,o)")

    def validate(self, embed_dim: int) -> None:
        if self.rank < 1 or self.rank > embed_dim // 4:
            raise ConfigError(f"lora.rank {self.rank} must be in [1, embed_dim/4 = {embed_dim // 4}]")
        bad = set(self.targets) - {"q", "k", "v", "o"}
        if bad or not self.targets:
            raise ConfigError(f"lora.targets must be a non-empty subset of q,k,v,o (got {self.targets})")


@dataclass
class CnnConfig:
    image_size: int = _f(64, "square input resolution in pixels")
    channels: int = _f(1, "input channels")
    conv_layers: int = _f(4, "convolution + ReLU + pool stages", "CNN table 'Number of convolutional hidden layers' = 4")
    kernels: int = _f(32, "convolution kernels (see cnn.kernels_mode)", "CNN table 'Number of convolutional kernels' = 480")
    kernels_mode: str = _f("per_layer", "how cnn.kernels is read: per_layer | total (split evenly across layers)")
    kernel_size: int = _f(3, "square kernel edge (same padding)")
    pool: int = _f(2, "max-pool size after each conv stage (1 disables pooling)")
    fc_layers: int = _f(2, "fully connected layers after flattening", "CNN table 'Number of fully connected layers' = 2")
    fc_hidden: int = _f(512, "dense hidden units", "CNN table 'Number of dense hidden layer units' = 512")
    dropout: float = _f(0.0, "dropout probability (only 0 is supported)", "CNN table 'Dropout coefficient' = 0")
    output_dim: int = _f(6, "regression outputs")
    bias: bool = _f(True, "use bias terms in conv and dense layers")

    @property
    def kernels_per_layer(self) -> int:
        if self.kernels_mode == "total":
            return max(1, self.kernels // self.conv_layers)
        return self.kernels

    def spatial_sizes(self) -> list[int]:
        sizes = [self.image_size]
        for _ in range(self.conv_layers):
            s = sizes[-1]
            if self.pool > 1:
                s //= self.pool
            sizes.append(s)
        return sizes

    def validate(self) -> None:
        if self.conv_layers < 1 or self.fc_layers < 1:
            raise ConfigError("cnn.conv_layers and cnn.fc_layers must be >= 1")
        if self.kernels_mode not in ("per_layer", "total"):
            raise ConfigError(f"cnn.kernels_mode must be per_layer or total, got {self.kernels_mode!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("cnn.kernel_size must be odd (same padding)")
        if self.dropout != 0:
            raise ConfigError("cnn.dropout: only 0 is supported")
        sizes = self.spatial_sizes()
        if min(sizes) < 1:
            raise ConfigError(f"cnn spatial size collapses below 1x1: {sizes}")


@dataclass
class OptimizerConfig:
    vit_lr: float = _f(1e-4, "Adam learning rate for TacViT fine-tuning", "ViT table 'Learning Rate' = 1e-4")
    vit_weight_decay: float = _f(1e-5, "TacViT weight decay", "ViT table 'Weight Decay' = 1e-5")
    cnn_lr: float = _f(1e-3, "Adam learning rate for the CNN (not given in the reference tables)")
    cnn_weight_decay: float = _f(1e-6, "CNN weight decay", "CNN table 'Adam decay' = 1e-6")
    beta1: float = _f(0.9, "Adam beta1", "CNN table 'Adam beta1' = 0.9")
    beta2: float = _f(0.999, "Adam beta2", "CNN table 'Adam beta2' = 0.999")
    eps: float = _f(1e-8, "Adam epsilon")
    decoupled_wd: bool = _f(True, "subtract lr*wd*param (true) or add wd*param to the gradient (false)")


@dataclass
class TrainConfig:
    batch_size: int = _f(16, "minibatch size", "ViT/CNN tables 'Batch Size' = 16")
    epochs: int = _f(30, "training epochs per run")
    seed: int = _f(0, "base seed (env TACVIT_SEED overrides)")
    split_fraction: float = _f(0.8, "per-sensor train fraction; the rest is held out", "80/20 train/validation split")
    scratch_vit: bool = _f(False, "train TacViT from random init instead of LoRA fine-tuning a base checkpoint")
    schedule: tuple = _f(((5, ("vit.block0", "vit.block1", "vit.block2", "vit.block3")),),
                         "gradual unfreezing as epoch:prefix|prefix;epoch:... (0-based epoch index)")

    def validate(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"train.split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("train.batch_size and train.epochs must be >= 1")


@dataclass
class PretrainConfig:
    epochs: int = _f(20, "epochs of self-pretraining on the randomized-profile corpus")
    lr: float = _f(1e-3, "pretraining Adam learning rate")
    weight_decay: float = _f(1e-5, "pretraining weight decay")
    val_fraction: float = _f(0.1, "fraction of the pretraining corpus held out for model selection")


@dataclass
class DataConfig:
    resize_mode: str = _f("resize", "fit stored images to the model input: resize | crop | letterbox")
    pixel_norm: str = _f("center", "pixel normalisation: none | center (maps [0,1] to [-1,1])")

    def validate(self) -> None:
        if self.resize_mode not in ("resize", "crop", "letterbox"):
            raise ConfigError(f"data.resize_mode must be resize, crop or letterbox, got {self.resize_mode!r}")
        if self.pixel_norm not in ("none", "center"):
            raise ConfigError(f"data.pixel_norm must be none or center, got {self.pixel_norm!r}")


@dataclass
class Settings:
    vit: VitConfig = field(default_factory=VitConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "Settings":
        self.vit.validate()
        self.lora.validate(self.vit.embed_dim)
        self.cnn.validate()
        self.train.validate()
        self.data.validate()
        return self

    def copy(self) -> "Settings":
        return from_text(to_text(self))


SECTIONS = [f.name for f in fields(Settings)]


def default_schedule(num_layers: int, epoch: int = 5, last: int = 4) -> tuple:
    blocks = tuple(f"vit.block{i}" for i in range(max(0, num_layers - last), num_layers))
    return ((epoch, blocks),)


def profile(name: str) -> Settings:
    """``desk`` (laptop-scale defaults) or ``full`` (reference-table sizes)."""
    s = Settings()
    if name == "desk":
        return s
    if name != "full":
        raise ConfigError(f"unknown profile {name!r} (desk | full)")
    s.vit = VitConfig(image_size=224, patch_size=16, channels=3, embed_dim=768, num_layers=12,
                      num_heads=12, mlp_hidden=3072)
    s.cnn = CnnConfig(image_size=128, kernels=480)
    s.train.schedule = default_schedule(12)
    return s


# -- text serialisation ---------------------------------------------------

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(f"{e}:{'|'.join(p)}" for e, p in value)
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(key: str, text: str, template) -> Any:
    text = text.strip()
    try:
        if isinstance(template, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, tuple):
            if key.endswith(".schedule"):
                if not text:
                    return ()
                out = []
                for item in text.split(";"):
                    ep, _, prefixes = item.partition(":")
                    out.append((int(ep), tuple(p for p in prefixes.split("|") if p)))
                return tuple(out)
            parts = [p for p in text.split(",") if p.strip()]
            if template and isinstance(template[0], int):
                return tuple(int(p) for p in parts)
            return tuple(p.strip() for p in parts)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def iter_keys(settings: Settings | None = None):
    """Yield (key, value, help, ref) for every configuration key."""
    settings = settings or Settings()
    for sec in SECTIONS:
        obj = getattr(settings, sec)
        for f in fields(obj):
            yield f"{sec}.{f.name}", getattr(obj, f.name), f.metadata.get("help", ""), f.metadata.get("ref", "")


def to_text(settings: Settings) -> str:
    return "".join(f"{k}={_format(v)}\n" for k, v, _, _ in iter_keys(settings))


def apply_overrides(settings: Settings, pairs: dict[str, str]) -> Settings:
    for key, raw in pairs.items():
        sec, _, name = key.partition(".")
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(settings, sec)
        names = {f.name for f in fields(obj)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _parse(key, raw, getattr(obj, name)))
    return settings


def parse_kv(text: str, source: str = "<text>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        k, _, v = line.partition("=")
        pairs[k.strip()] = v.strip()
    return pairs


def from_text(text: str, base: Settings | None = None) -> Settings:
    s = Settings() if base is None else base.copy()
    return apply_overrides(s, parse_kv(text))


def load_settings(path, base: Settings | None = None) -> Settings:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    s = Settings() if base is None else base.copy()
    return apply_overrides(s, parse_kv(text, str(path)))


def keys_help() -> str:
    lines = []
    for key, value, help_, ref in iter_keys():
        tail = f" [ref: {ref}]" if ref else ""
        lines.append(f"  {key}={_format(value)}  {help_}{tail}")
    return "\n".join(lines)
