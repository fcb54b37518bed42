"""Central finite-difference oracle for reverse-mode gradients."""

from typing import Callable, Dict, Mapping

import numpy as np

from src.engine.autograd import Tape, Tensor, gradient


def numerical_gradient(fn: Callable[[Dict[str, Tensor]], Tensor], inputs: Mapping[str, np.ndarray],
                       name: str, step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn`` with respect to ``inputs[name]``."""
    base = {key: np.array(value, dtype=np.float64) for key, value in inputs.items()}
    target = base[name]
    grad = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        original = target[idx]
        target[idx] = original + step
        upper = fn({k: Tensor(v) for k, v in base.items()}).item()
        target[idx] = original - step
        lower = fn({k: Tensor(v) for k, v in base.items()}).item()
        target[idx] = original
        grad[idx] = (upper - lower) / (2.0 * step)
    return grad


def analytic_gradient(fn: Callable[[Dict[str, Tensor]], Tensor],
                      inputs: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    params = {key: Tensor(value, requires_grad=True, name=key) for key, value in inputs.items()}
    with Tape() as tape:
        loss = fn(params)
    return {key: grad.data for key, grad in gradient(tape, loss, params).items()}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[Dict[str, Tensor]], Tensor], inputs: Mapping[str, np.ndarray],
                    step: float = 1e-6) -> Dict[str, float]:
    """Relative error between tape gradients and central differences, per input."""
    analytic = analytic_gradient(fn, inputs)
    return {
        name: relative_error(analytic[name], numerical_gradient(fn, inputs, name, step))
        for name in inputs
    }
