"""CNN baseline: conv/ReLU/max-pool stages, then a dense regression head."""

from __future__ import annotations

import math

import numpy as np

from ..config import CnnConfig
from ..errors import ShapeError
from ..numcore import Tensor, ops
from .params import ModelParams, init_array, param_rng


def cnn_param_shapes(cfg: CnnConfig) -> list[tuple[str, tuple[int, ...], str, int]]:
    cfg.validate()
    k, ch = cfg.kernel_size, cfg.kernels_per_layer
    spec = []
    c_in = cfg.channels
    for i in range(cfg.conv_layers):
        spec.append((f"cnn.conv{i}.w", (ch, c_in, k, k), "kaiming", c_in * k * k))
        if cfg.bias:
            spec.append((f"cnn.conv{i}.b", (ch,), "zeros", 1))
        c_in = ch
    flat = ch * cfg.spatial_sizes()[-1] ** 2
    widths = [flat] + [cfg.fc_hidden] * (cfg.fc_layers - 1) + [cfg.output_dim]
    for j in range(cfg.fc_layers):
        last = j == cfg.fc_layers - 1
        spec.append((f"cnn.fc{j}.w", (widths[j + 1], widths[j]), "lecun" if last else "kaiming", widths[j]))
        if cfg.bias:
            spec.append((f"cnn.fc{j}.b", (widths[j + 1],), "zeros", 1))
    return spec


def cnn_param_count(cfg: CnnConfig) -> int:
    return int(sum(math.prod(s) for _, s, _, _ in cnn_param_shapes(cfg)))


def init_cnn(cfg: CnnConfig, seed: int) -> ModelParams:
    params = ModelParams()
    for name, shape, kind, fan_in in cnn_param_shapes(cfg):
        params.add(name, init_array(kind, shape, param_rng(seed, name), fan_in))
    return params


def cnn_forward(images, params: ModelParams, cfg: CnnConfig) -> Tensor:
    """(N, C, H, W) images -> (N, output_dim).

    Feature maps are kept channels-last internally, so the flattened vector is
    ordered (row, col, channel). Each stage pools before the ReLU, which gives
    the same result as ReLU-then-pool at a quarter of the ReLU cost.
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim != 4 or x.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ShapeError(f"cnn: expected (N, {cfg.channels}, {cfg.image_size}, {cfg.image_size}) images, got {x.shape}")
    x = ops.transpose(x, (0, 2, 3, 1)) if x.requires_grad else Tensor(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)))
    pad = cfg.kernel_size // 2
    for i in range(cfg.conv_layers):
        bias = params[f"cnn.conv{i}.b"] if cfg.bias else None
        x = ops.conv2d(x, params[f"cnn.conv{i}.w"], bias, stride=1, padding=pad, channels_last=True)
        if cfg.pool > 1:
            x = ops.maxpool2d(x, cfg.pool, axes=(1, 2))
        x = ops.relu(x)
    x = ops.reshape(x, (x.shape[0], -1))
    for j in range(cfg.fc_layers):
        x = ops.linear(x, params[f"cnn.fc{j}.w"], params[f"cnn.fc{j}.b"] if cfg.bias else None)
        if j < cfg.fc_layers - 1:
            x = ops.relu(x)
    return x
