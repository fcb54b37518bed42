"""Differentiable kernels.

Every kernel validates shapes, computes its value with numpy and hands a
closure for the vector-Jacobian product to ``emit``.
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.engine.autograd import Tensor, as_tensor, emit
from src.utils.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

Axis = Union[int, Tuple[int, ...], None]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return emit("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return emit("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return emit("mul", a.data * b.data, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    return emit("scale", x.data * factor, (x,), lambda g: (g * factor,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return emit("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalError(f"log: non-positive input (min {x.data.min():.3g})")
    return emit("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return emit("relu", np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    factor = np.where(active, 1.0, slope)
    return emit("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    negative = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(active, x.data, negative)
    slope = np.where(active, 1.0, negative + alpha)
    return emit("elu", out, (x,), lambda g: (g * slope,))


# -- linear algebra and layout -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return emit("matmul", np.matmul(a.data, b.data), (a, b), backward)


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise ShapeError("transpose", x.shape)
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes)
    inverse = tuple(np.argsort(axes))
    return emit("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat")
    first = tensors[0]
    ax = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
                t.shape[i] != first.shape[i] for i in range(first.ndim) if i != ax):
            raise ShapeError("concat", first.shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return emit("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def stack(tensors: Sequence, axis: int = -2) -> Tensor:
    """Stack equally shaped tensors along a new axis (counted on the output)."""
    tensors = [as_tensor(t) for t in tensors]
    out_ndim = tensors[0].ndim + 1
    ax = axis % out_ndim
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def narrow(x, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError("narrow", x.shape, (start, stop))
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[index] = g
        return (grad,)

    return emit("narrow", x.data[index], (x,), backward)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (rows by default); repeated indices accumulate."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[ax] or idx.max() >= x.shape[ax]):
        raise ShapeError("take", x.shape, idx.shape)

    def backward(g):
        grad = np.zeros_like(x.data)
        moved = np.moveaxis(grad, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (grad,)

    return emit("take", np.take(x.data, idx, axis=ax), (x,), backward)


# -- reductions ----------------------------------------------------------------

def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return emit("sum", np.asarray(out), (x,), backward)


def mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# -- normalisation and attention -----------------------------------------------

def _prepare_mask(op: str, x: Tensor, mask) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    try:
        if np.broadcast_shapes(mask.shape, x.shape) != x.shape:
            raise ValueError
    except ValueError:
        raise ShapeError(op, x.shape, mask.shape) from None
    mask = np.broadcast_to(mask, x.shape)
    if not np.all(mask.any(axis=-1)):
        raise NumericalError(f"{op}: a row has every entry masked out")
    return mask


def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis; masked-out entries receive probability 0."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("softmax", x.shape)
    mask = _prepare_mask("softmax", x, mask)
    logits = x.data if mask is None else np.where(mask, x.data, -np.inf)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    out = weights / weights.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return emit("softmax", out, (x,), backward)


def logsumexp(x, mask=None) -> Tensor:
    """log(sum(exp(x))) over the last axis, restricted to unmasked entries."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("logsumexp", x.shape)
    mask = _prepare_mask("logsumexp", x, mask)
    logits = x.data if mask is None else np.where(mask, x.data, -np.inf)
    peak = logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits - peak)
    total = weights.sum(axis=-1, keepdims=True)
    out = (np.log(total) + peak)[..., 0]
    probs = weights / total

    def backward(g):
        return (g[..., None] * probs,)

    return emit("logsumexp", out, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1] if x.ndim else 0
    if width < 1 or gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        grad_gain = (g * normed).sum(axis=lead)
        grad_bias = g.sum(axis=lead)
        d_normed = g * gain.data
        grad_x = inv_std * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias

    return emit("layer_norm", out, (x, gain, bias), backward)


def l2_normalize(x, tiny: float = 1e-12) -> Tensor:
    """Scale each last-axis vector to unit norm.

    Zero vectors stay zero (and pass no gradient); their count is stored in
    ``out.flags["zero_rows"]``.
    """
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("l2_normalize", x.shape)
    norms = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    zero = norms <= tiny
    safe = np.where(zero, 1.0, norms)
    out = np.where(zero, 0.0, x.data / safe)

    def backward(g):
        grad = (g - out * (g * out).sum(axis=-1, keepdims=True)) / safe
        return (np.where(zero, 0.0, grad),)

    result = emit("l2_normalize", out, (x,), backward)
    zero_rows = int(zero.sum())
    result.flags["zero_rows"] = zero_rows
    if zero_rows:
        logger.debug(f"l2_normalize: {zero_rows} zero vector(s) left unnormalised")
    return result
