"""Dense tensor with define-by-run reverse-mode differentiation.

Operations record themselves on the innermost active :class:`GradTape` when at
least one input requires a gradient. Outside a tape nothing is recorded, which
is how evaluation runs.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import NumericError, UsageError

_DTYPE: type = np.float32
_TAPES: list["GradTape"] = []


def get_default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default precision (f64 is used by gradient checks)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_from_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64) or arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes if axes else None)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeRecord:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    # maps d(loss)/d(out) to one gradient per input (None where not needed)
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    records: list[TapeRecord] = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> GradTape | None:
    return _TAPES[-1] if _TAPES else None


def check_finite(op: str, arr: np.ndarray, where: str = "forward") -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value in {where} of '{op}'")


def emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap an op result and record it on the active tape when gradients are needed."""
    check_finite(op, data)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        out._from_op = True
        tape.records.append(TapeRecord(op, out, tuple(inputs), grad_fn))
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Reverse sweep over ``tape`` seeded with d(loss)/d(loss) = 1.

    Leaf tensors (parameters, inputs) accumulate into ``.grad``; intermediate
    gradients are discarded once propagated.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    if not any(r.out is loss for r in reversed(tape.records)):
        raise UsageError("loss was not produced on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g_out = pending.pop(id(rec.out), None)
        if g_out is None:
            continue
        grads = rec.backward(g_out)
        for inp, g in zip(rec.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            check_finite(rec.op, g, "backward")
            if inp._from_op:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g
            elif inp.grad is None:
                inp.grad = np.array(g, dtype=inp.data.dtype)
            else:
                inp.grad = inp.grad + g
