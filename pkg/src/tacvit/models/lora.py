"""Low-rank adapters on attention projections.

An adapter adds ``(alpha / r) * W_A @ W_B`` to a frozen d x d projection, with
``W_A`` of shape (d, r) and ``W_B`` of shape (r, d). ``W_B`` starts at zero so a
freshly attached adapter leaves the model output unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import LoraConfig, VitConfig
from ..errors import ConfigError, ShapeError
from ..numcore import Tensor, ops
from .params import ModelParams, param_rng


@dataclass
class LoraAdapter:
    a: Tensor  # W_A, (d, r)
    b: Tensor  # W_B, (r, d)
    rank: int
    alpha: float
    target: str

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scaling * (self.a.data @ self.b.data)


def lora_name(block: int, target: str, which: str) -> str:
    return f"vit.block{block}.attn.lora.{target}.{which}"


def lora_apply(base_w: Tensor, adapter: LoraAdapter, x: Tensor, base_b: Tensor | None = None) -> Tensor:
    """``x @ (W + s W_A W_B).T + b`` without forming the d x d update."""
    d_out, d_in = base_w.shape
    if adapter.a.shape != (d_out, adapter.rank) or adapter.b.shape != (adapter.rank, d_in):
        raise ShapeError(f"lora: W_A {adapter.a.shape} / W_B {adapter.b.shape} do not match "
                         f"rank {adapter.rank} and base {base_w.shape}")
    base = ops.linear(x, base_w, base_b)
    low = ops.linear(ops.linear(x, adapter.b), adapter.a)
    return ops.add(base, ops.mul(low, adapter.scaling))


def attach_lora(params: ModelParams, vit: VitConfig, lora: LoraConfig, seed: int) -> dict:
    """Add adapter tensors for every block/target to ``params`` and return them."""
    lora.validate(vit.embed_dim)
    d, r = vit.embed_dim, lora.rank
    for i in range(vit.num_layers):
        for t in lora.targets:
            name_a, name_b = lora_name(i, t, "a"), lora_name(i, t, "b")
            if name_a in params:
                continue
            a = param_rng(seed, name_a).standard_normal((d, r)) / np.sqrt(d)
            params.add(name_a, a)
            params.add(name_b, np.zeros((r, d)))
    return collect_adapters(params, vit, lora)


def collect_adapters(params: ModelParams, vit: VitConfig, lora: LoraConfig) -> dict:
    """Adapters already present in ``params`` keyed by (block, target); empty if none."""
    out = {}
    for i in range(vit.num_layers):
        for t in lora.targets:
            name_a, name_b = lora_name(i, t, "a"), lora_name(i, t, "b")
            if name_a in params and name_b in params:
                a, b = params[name_a], params[name_b]
                if a.shape[1] != lora.rank:
                    raise ConfigError(f"{name_a} has rank {a.shape[1]}, config says {lora.rank}")
                out[(i, t)] = LoraAdapter(a, b, lora.rank, lora.alpha, t)
    return out


def merge_lora(params: ModelParams, adapters: dict) -> ModelParams:
    """Copy of ``params`` with every adapter folded into its base projection and removed."""
    merged = ModelParams()
    lora_names = set()
    for (i, t), ad in adapters.items():
        lora_names.update({lora_name(i, t, "a"), lora_name(i, t, "b")})
    for name, tensor in params.items():
        if name in lora_names:
            continue
        data = tensor.data.copy()
        merged.add(name, data, tensor.requires_grad)
    for (i, t), ad in adapters.items():
        w = merged[f"vit.block{i}.attn.w{t}"]
        w.data = (w.data + ad.delta()).astype(w.data.dtype)
    return merged
