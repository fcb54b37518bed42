"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap read-only numpy arrays. Kernels in ``src.engine.functional``
record a ``Node`` on the active ``Tape`` whenever one of their inputs requires
gradients; ``gradient`` replays the tape backwards.
"""

import logging
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import NumericalError

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = np.dtype(np.float64)
_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


def set_default_dtype(dtype: Union[str, np.dtype]):
    """Select the scalar precision used for new tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"Unsupported precision: {dtype}")
    _DEFAULT_DTYPE = resolved


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class Tensor:
    """Immutable dense tensor."""

    __slots__ = ("data", "requires_grad", "name", "flags", "__weakref__")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None):
        array = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        if any(dim <= 0 for dim in array.shape):
            raise ValueError(f"Tensor dimensions must be positive, got {array.shape}")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.flags: Dict[str, object] = {}

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the kernels live in functional.
    def __add__(self, other):
        from src.engine import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.engine import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from src.engine import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from src.engine import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from src.engine import functional as F
        if not isinstance(other, (int, float)):
            raise TypeError("Tensor division is only defined for scalar divisors")
        return F.scale(self, 1.0 / float(other))

    def __neg__(self):
        from src.engine import functional as F
        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from src.engine import functional as F
        return F.matmul(self, other)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap constants; tensors pass through."""
    return value if isinstance(value, Tensor) else Tensor(value)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    """One executed kernel."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of executed kernels (inputs always precede their consumers)."""
    nodes: List[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        return False

    def record(self, node: Node):
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Create a kernel output, validate it and record it on the active tape."""
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"{op}: produced non-finite values")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs_grad, dtype=value.dtype if value.dtype.kind == "f" else None)
    tape = _ACTIVE_TAPE.get()
    if needs_grad and tape is not None:
        tape.record(Node(op, tuple(inputs), out, backward))
    return out


def gradient(tape: Tape, loss: Tensor, params: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    """Return d(loss)/d(param) for every named parameter.

    Parameters that do not lie on a recorded path to ``loss`` get zeros.
    """
    if loss.ndim != 0:
        raise NumericalError(f"gradient: loss must be a scalar, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    result = {}
    for name, param in params.items():
        grad = grads.get(id(param))
        if grad is None:
            grad = np.zeros_like(param.data)
        result[name] = Tensor(grad, dtype=param.data.dtype)
    return result
