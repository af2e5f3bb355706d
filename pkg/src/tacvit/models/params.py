"""Named parameter store with per-tensor frozen flags."""

from __future__ import annotations

import zlib
from typing import Iterable, Iterator, Mapping

import numpy as np

from ..errors import ConfigError
from ..numcore import Tensor, get_default_dtype


class ModelParams:
    """Ordered mapping from dotted path to parameter :class:`Tensor`.

    A tensor is trainable iff ``requires_grad`` is set; frozen tensors are never
    touched by the optimizer.
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self.tensors[name] = t
        return t

    def is_frozen(self, name: str) -> bool:
        return not self.tensors[name].requires_grad

    def set_trainable(self, names: Iterable[str], trainable: bool = True) -> None:
        for n in names:
            self.tensors[n].requires_grad = trainable

    def freeze_all(self) -> None:
        for t in self.tensors.values():
            t.requires_grad = False

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.tensors.items() if t.requires_grad]

    def num_params(self, trainable_only: bool = False) -> int:
        return int(sum(t.size for t in self.tensors.values() if t.requires_grad or not trainable_only))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self.tensors) - set(state)
            extra = set(state) - set(self.tensors)
            if missing or extra:
                raise ConfigError(f"checkpoint mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for n, arr in state.items():
            if n not in self.tensors:
                continue
            t = self.tensors[n]
            if tuple(arr.shape) != t.shape:
                raise ConfigError(f"checkpoint tensor {n}: shape {tuple(arr.shape)} != {t.shape}")
            t.data = np.array(arr, dtype=t.data.dtype)

    @classmethod
    def from_state(cls, state: Mapping[str, np.ndarray], trainable: bool = True) -> "ModelParams":
        p = cls()
        for n, arr in state.items():
            p.add(n, np.array(arr, dtype=get_default_dtype()), trainable)
        return p

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for n, t in self.tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n, dtype=t.data.dtype)
            out.tensors[n] = c
        return out


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator that depends only on (seed, name), not on creation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def init_array(kind: str, shape: tuple[int, ...], rng: np.random.Generator, fan_in: int = 1) -> np.ndarray:
    dtype = get_default_dtype()
    if kind == "zeros":
        return np.zeros(shape, dtype=dtype)
    if kind == "ones":
        return np.ones(shape, dtype=dtype)
    if kind == "trunc_normal":
        # std 0.02, resampled beyond 2 sigma
        z = rng.standard_normal(shape)
        bad = np.abs(z) > 2.0
        while bad.any():
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > 2.0
        return (0.02 * z).astype(dtype)
    if kind == "kaiming":
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    if kind == "lecun":
        return (rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)).astype(dtype)
    raise ValueError(f"unknown init kind {kind!r}")
