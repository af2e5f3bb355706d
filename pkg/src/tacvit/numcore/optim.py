"""Adam with bias correction and optional decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled_wd: bool = True

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one update to ``param`` in place of its data array and clear its grad.

    The old data array is replaced, not mutated, so arrays captured by earlier
    forward passes stay valid.
    """
    if param.grad is None:
        raise UsageError(f"adam_step: parameter {param.name or ''} has no gradient")
    if state.m.shape != param.shape:
        raise UsageError(f"adam_step: state shape {state.m.shape} != parameter shape {param.shape}")
    g = param.grad
    theta = param.data
    if state.weight_decay and not state.decoupled_wd:
        g = g + state.weight_decay * theta
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay and state.decoupled_wd:
        update = update + state.weight_decay * theta
    param.data = (theta - state.lr * update).astype(theta.dtype)
    param.grad = None


@dataclass
class Adam:
    """Adam over a name -> Tensor mapping; tensors with ``requires_grad=False`` are skipped."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled_wd: bool = True
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if not p.requires_grad:
                p.grad = None
                continue
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState.for_param(
                    p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                    weight_decay=self.weight_decay, decoupled_wd=self.decoupled_wd)
            adam_step(p, st)
