"""Differentiable operations on :class:`Tensor`.

Every function computes its result with numpy and hands a closure for the
vector-Jacobian product to :func:`emit`. Broadcasting follows numpy rules and
gradients are summed back to each input's shape.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, emit


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return emit("add", a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return emit("sub", a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = float(b)
        return emit("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return emit("mul", ad * bd, (a, b),
                lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading dimensions."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = ad @ bd

    def grad(g):
        ga = gb = None
        if bd.ndim == 2:
            if a.requires_grad:
                ga = g @ bd.T
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            if a.requires_grad:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return emit("matmul", out, (a, b), grad)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out_features, in_features)."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[1]:
        raise ShapeError(f"linear: input {xd.shape} does not match weight {wd.shape}")
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def grad(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return emit("linear", out, inputs, grad)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return emit("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    arrays = [t.data for t in tensors]
    sizes = [a.shape[axis] for a in arrays]
    cuts = np.cumsum(sizes)[:-1]
    return emit("concat", np.concatenate(arrays, axis=axis), tuple(tensors),
                lambda g: tuple(np.split(g, cuts, axis=axis)))


def broadcast_to(x: Tensor, shape) -> Tensor:
    old = x.shape
    return emit("broadcast_to", np.broadcast_to(x.data, shape).copy(), (x,),
                lambda g: (_unbroadcast(g, old),))


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along ``axis`` (dimension is dropped)."""
    shape, dtype = x.shape, x.data.dtype

    def grad(g):
        full = np.zeros(shape, dtype=dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return emit("take", np.take(x.data, index, axis=axis), (x,), grad)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return emit("sum", np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
                lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.size
        return emit("mean", np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
                    lambda g: (np.full(shape, g / n, dtype=x.data.dtype),))
    n = shape[axis]
    return emit("mean", x.data.mean(axis=axis), (x,),
                lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return emit("relu", np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = (0.5 * (1.0 + erf(xd * _SQRT1_2))).astype(xd.dtype)
    pdf = (_INV_SQRT_2PI * np.exp(-0.5 * xd * xd)).astype(xd.dtype)
    return emit("gelu", xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return emit("softmax", y, (x,), grad)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: gamma {gamma.shape} / beta {beta.shape} vs last dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def grad(g):
        gx_hat = g * gd
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return gx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return emit("layernorm", (xhat * gd + beta.data).astype(xd.dtype), (x, gamma, beta), grad)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Channels-last (N, Hp, Wp, C) -> (N*Ho*Wo, kh*kw*C) patch matrix."""
    n, c = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c), ho, wo


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, channels_last: bool = False) -> Tensor:
    """2-D cross-correlation.

    ``x`` is (C_in, H, W) or (N, C_in, H, W), or (N, H, W, C_in) with
    ``channels_last``; ``kernels`` is always (C_out, C_in, k, k). Computed
    channels-last via im2col; the output uses the input's layout.
    """
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    batched = x.ndim == 4
    if channels_last and not batched:
        raise ShapeError(f"conv2d: channels_last input must be 4-D, got {x.shape}")
    xd = x.data if batched else x.data[None]
    xh = xd if channels_last else xd.transpose(0, 2, 3, 1)
    wd = kernels.data
    n, h, w, c = xh.shape
    o, ci, kh, kw = wd.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {ci} ({xd.shape} vs {wd.shape})")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    xp = np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xh
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    w2 = wd.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o)
    if not channels_last:
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        if not batched:
            out = out[0]

    def grad(g):
        g4 = g if batched else g[None]
        gh = g4 if channels_last else g4.transpose(0, 2, 3, 1)
        g2 = gh.reshape(-1, o)
        gw = None
        if kernels.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            ph, pw = kh - 1 - padding, kw - 1 - padding
            if stride == 1 and ph >= 0 and pw >= 0:
                # input gradient = full correlation of g with the flipped, transposed kernels
                gp = np.pad(gh, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
                gcols, _, _ = _im2col(gp, kh, kw, 1)
                wflip = wd[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, -1)
                gx = (gcols @ wflip.T).reshape(n, h, w, c)
            else:
                dcols = (g2 @ w2).reshape(n, ho, wo, kh, kw, c)
                dxp = np.zeros((n, hp, wp, c), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
                gx = dxp[:, padding:padding + h, padding:padding + w]
            if not channels_last:
                gx = gx.transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx if batched else gx[0])
        if bias is None:
            return gx, gw
        gb = np.ones(len(g2), dtype=g2.dtype) @ g2 if bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return emit("conv2d", out, inputs, grad)


def maxpool2d(x: Tensor, size: int, axes: tuple[int, int] = (-2, -1)) -> Tensor:
    """Non-overlapping max pooling over two spatial ``axes``; trailing remainder rows/cols are dropped.

    Where a window holds several equal maxima, the first in row-major order gets the gradient.
    """
    xd = x.data
    ax = tuple(a % xd.ndim for a in axes)
    h, w = xd.shape[ax[0]], xd.shape[ax[1]]
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool2d: {h}x{w} input is smaller than pool size {size}")

    def window(i, j):
        sl = [slice(None)] * xd.ndim
        sl[ax[0]] = slice(i, ho * size, size)
        sl[ax[1]] = slice(j, wo * size, size)
        return tuple(sl)

    offsets = [(i, j) for i in range(size) for j in range(size)]
    out = xd[window(0, 0)].copy()
    for i, j in offsets[1:]:
        np.maximum(out, xd[window(i, j)], out=out)

    def grad(g):
        full = np.zeros(xd.shape, dtype=g.dtype)
        hits = [xd[window(i, j)] == out for i, j in offsets]
        count = hits[0].astype(np.int8)
        for hit in hits[1:]:
            count += hit
        if count.max() > 1:
            taken = np.zeros(out.shape, dtype=bool)
            for k, hit in enumerate(hits):
                hits[k] = hit & ~taken
                taken |= hit
        for (i, j), hit in zip(offsets, hits):
            np.multiply(g, hit, out=full[window(i, j)])
        return (full,)

    return emit("maxpool2d", out, (x,), grad)


def mse_loss(pred: Tensor, truth) -> Tensor:
    """Mean over every element of the squared error."""
    truth = as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs truth {truth.shape}")
    diff = pred.data - truth.data
    n = diff.size
    loss = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    return emit("mse_loss", loss, (pred, truth),
                lambda g: (g * 2.0 * diff / n, g * -2.0 * diff / n))
