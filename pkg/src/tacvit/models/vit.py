"""TacViT: patch embedding, pre-norm transformer encoder, regression head."""

from __future__ import annotations

import math

import numpy as np

from ..config import VitConfig
from ..errors import ConfigError, ShapeError
from ..numcore import Tensor, ops
from .lora import LoraAdapter, lora_apply
from .params import ModelParams, init_array, param_rng


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(C, H, W) or (N, C, H, W) -> (..., num_patches, C*P*P).

    Patches are taken in row-major order over the patch grid; each patch is
    flattened channel-major (C, P, P).
    """
    batched = image.ndim == 4
    x = image if batched else image[None]
    n, c, h, w = x.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    out = x.reshape(n, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5).reshape(n, gh * gw, c * patch * patch)
    return out if batched else out[0]


def unpatchify(patches: np.ndarray, patch: int, channels: int, height: int, width: int) -> np.ndarray:
    batched = patches.ndim == 3
    p = patches if batched else patches[None]
    n = p.shape[0]
    gh, gw = height // patch, width // patch
    out = p.reshape(n, gh, gw, channels, patch, patch).transpose(0, 3, 1, 4, 2, 5).reshape(n, channels, height, width)
    return out if batched else out[0]


def _patchify_tensor(x: Tensor, patch: int) -> Tensor:
    n, c, h, w = x.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    t = ops.reshape(x, (n, c, gh, patch, gw, patch))
    t = ops.transpose(t, (0, 2, 4, 1, 3, 5))
    return ops.reshape(t, (n, gh * gw, c * patch * patch))


def vit_param_shapes(cfg: VitConfig) -> list[tuple[str, tuple[int, ...], str, int]]:
    """(name, shape, init kind, fan_in) for every ViT parameter, in creation order."""
    d, t = cfg.embed_dim, cfg.num_patches + 1
    spec = [
        ("vit.patch.w", (d, cfg.patch_dim), "trunc_normal", cfg.patch_dim),
        ("vit.patch.b", (d,), "zeros", 1),
        ("vit.cls", (d,), "trunc_normal", 1),
        ("vit.pos", (t, d), "trunc_normal", 1),
    ]
    for i in range(cfg.num_layers):
        b = f"vit.block{i}"
        spec += [(f"{b}.ln1.g", (d,), "ones", 1), (f"{b}.ln1.b", (d,), "zeros", 1)]
        for proj in ("q", "k", "v", "o"):
            spec += [(f"{b}.attn.w{proj}", (d, d), "trunc_normal", d), (f"{b}.attn.b{proj}", (d,), "zeros", 1)]
        spec += [
            (f"{b}.ln2.g", (d,), "ones", 1), (f"{b}.ln2.b", (d,), "zeros", 1),
            (f"{b}.mlp.w1", (cfg.mlp_hidden, d), "trunc_normal", d), (f"{b}.mlp.b1", (cfg.mlp_hidden,), "zeros", 1),
            (f"{b}.mlp.w2", (d, cfg.mlp_hidden), "trunc_normal", cfg.mlp_hidden), (f"{b}.mlp.b2", (d,), "zeros", 1),
        ]
    spec += [("vit.ln.g", (d,), "ones", 1), ("vit.ln.b", (d,), "zeros", 1)]
    widths = [d, *cfg.head_hidden, cfg.output_dim]
    for j in range(cfg.head_layers):
        last = j == cfg.head_layers - 1
        spec += [(f"head.fc{j}.w", (widths[j + 1], widths[j]), "lecun" if last else "kaiming", widths[j]),
                 (f"head.fc{j}.b", (widths[j + 1],), "zeros", 1)]
    return spec


def vit_param_count(cfg: VitConfig) -> int:
    return int(sum(math.prod(shape) for _, shape, _, _ in vit_param_shapes(cfg)))


def init_vit(cfg: VitConfig, seed: int) -> ModelParams:
    cfg.validate()
    params = ModelParams()
    for name, shape, kind, fan_in in vit_param_shapes(cfg):
        params.add(name, init_array(kind, shape, param_rng(seed, name), fan_in))
    return params


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention on (N, heads, T, d_h) tensors."""
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} must agree")
    dh = q.shape[-1]
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    return ops.matmul(ops.softmax_lastdim(scores), v)


def _projection(h: Tensor, params: ModelParams, block: str, proj: str,
                adapters: dict | None, index: int) -> Tensor:
    w, b = params[f"{block}.attn.w{proj}"], params[f"{block}.attn.b{proj}"]
    ad = adapters.get((index, proj)) if adapters else None
    if ad is None:
        return ops.linear(h, w, b)
    return lora_apply(w, ad, h, b)


def encoder_block(x: Tensor, params: ModelParams, cfg: VitConfig, index: int,
                  adapters: dict | None = None) -> Tensor:
    b = f"vit.block{index}"
    n, t, d = x.shape
    nh, dh = cfg.num_heads, d // cfg.num_heads
    h = ops.layernorm(x, params[f"{b}.ln1.g"], params[f"{b}.ln1.b"], cfg.ln_eps)

    def heads(z: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(z, (n, t, nh, dh)), (0, 2, 1, 3))

    q = heads(_projection(h, params, b, "q", adapters, index))
    k = heads(_projection(h, params, b, "k", adapters, index))
    v = heads(_projection(h, params, b, "v", adapters, index))
    a = ops.reshape(ops.transpose(attention(q, k, v), (0, 2, 1, 3)), (n, t, d))
    x = ops.add(x, _projection(a, params, b, "o", adapters, index))
    h = ops.layernorm(x, params[f"{b}.ln2.g"], params[f"{b}.ln2.b"], cfg.ln_eps)
    h = ops.gelu(ops.linear(h, params[f"{b}.mlp.w1"], params[f"{b}.mlp.b1"]))
    return ops.add(x, ops.linear(h, params[f"{b}.mlp.w2"], params[f"{b}.mlp.b2"]))


def vit_embed(images, params: ModelParams, cfg: VitConfig) -> Tensor:
    """Patch tokens with CLS prepended and positions added: (N, T+1, d)."""
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim != 4 or x.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ShapeError(f"vit: expected (N, {cfg.channels}, {cfg.image_size}, {cfg.image_size}) images, got {x.shape}")
    n, d = x.shape[0], cfg.embed_dim
    tokens = ops.linear(_patchify_tensor(x, cfg.patch_size), params["vit.patch.w"], params["vit.patch.b"])
    cls = ops.broadcast_to(ops.reshape(params["vit.cls"], (1, 1, d)), (n, 1, d))
    return ops.add(ops.concat([cls, tokens], axis=1), params["vit.pos"])


def vit_features(images, params: ModelParams, cfg: VitConfig, adapters: dict | None = None) -> Tensor:
    x = vit_embed(images, params, cfg)
    if adapters:
        for (i, proj) in adapters:
            if i >= cfg.num_layers or proj not in ("q", "k", "v", "o"):
                raise ConfigError(f"adapter ({i}, {proj}) does not match a {cfg.num_layers}-block encoder")
    for i in range(cfg.num_layers):
        x = encoder_block(x, params, cfg, i, adapters)
    x = ops.layernorm(x, params["vit.ln.g"], params["vit.ln.b"], cfg.ln_eps)
    if cfg.pool == "cls":
        return ops.take(x, 0, axis=1)
    return ops.mean(x, axis=1)


def regression_head(feat: Tensor, params: ModelParams, layers: int) -> Tensor:
    h = feat
    for j in range(layers):
        h = ops.linear(h, params[f"head.fc{j}.w"], params[f"head.fc{j}.b"])
        if j < layers - 1:
            h = ops.relu(h)
    return h


def vit_forward(images, params: ModelParams, cfg: VitConfig,
                adapters: dict[tuple[int, str], LoraAdapter] | None = None) -> Tensor:
    """(N, C, H, W) images -> (N, output_dim) predictions."""
    return regression_head(vit_features(images, params, cfg, adapters), params, cfg.head_layers)
