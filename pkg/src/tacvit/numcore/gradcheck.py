"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor, default_dtype


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float, indices=None) -> np.ndarray:
    """d f / d t by central differences, perturbing ``t.data`` in place.

    Only entries listed in ``indices`` (flat positions) are probed when given;
    the rest of the returned array is zero.
    """
    flat = t.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(t.shape)


def analytic_grads(f: Callable[[], Tensor], wrt: Sequence[Tensor]) -> list[np.ndarray]:
    for t in wrt:
        t.grad = None
        t.requires_grad = True
    with GradTape() as tape:
        y = f()
    tape.backward(y)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max|a-b| / max(max|a|, max|b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(f: Callable[[], Tensor], wrt: Sequence[Tensor], h: float = 1e-6,
                    max_entries: int | None = None, seed: int = 0,
                    fd_dtype=np.float64) -> float:
    """Return the worst relative error between backprop and finite differences.

    Backprop runs at the tensors' own precision. The difference quotients are
    taken at the same point but evaluated in ``fd_dtype`` (f64 by default), so
    an f32 check measures the gradient code rather than f32 cancellation in
    the quotient. Pass ``fd_dtype=None`` to difference at native precision.
    Each tensor's error is relative to its own largest gradient entry, floored
    at 1e-4 of the largest entry over all checked tensors.
    """
    rng = np.random.default_rng(seed)
    analytic = analytic_grads(f, wrt)
    pairs = []
    for t, ga in zip(wrt, analytic):
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = rng.choice(t.size, size=max_entries, replace=False)
        if fd_dtype is None:
            gn = numerical_grad(f, t, h, idx)
        else:
            saved = [w.data for w in wrt]
            try:
                for w in wrt:
                    w.data = w.data.astype(fd_dtype)
                with default_dtype(fd_dtype):
                    gn = numerical_grad(f, t, h, idx)
            finally:
                for w, d in zip(wrt, saved):
                    w.data = d
        if idx is not None:
            ga = ga.reshape(-1)[idx]
            gn = gn.reshape(-1)[idx]
        pairs.append((ga, gn))
    # a tensor whose gradient is (near) zero is judged against the largest
    # gradient in the check, not against difference-quotient round-off
    overall = max((max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)) for a, b in pairs), default=0.0)
    floor = max(1e-8, 1e-4 * float(overall))
    return max((rel_error(a, b, floor) for a, b in pairs), default=0.0)
