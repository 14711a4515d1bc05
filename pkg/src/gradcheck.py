"""
Central finite-difference gradient checking.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LossFn = Callable[[], Tensor]


def numerical_gradient(
    fn: LossFn,
    x: Tensor,
    eps: float = 1e-5,
    indices: Optional[Iterable[Tuple[int, ...]]] = None,
) -> np.ndarray:
    """(f(x + eps) - f(x - eps)) / 2eps per entry of x; entries not in indices stay 0."""
    grad = np.zeros_like(x.data)
    with no_grad():
        for idx in indices if indices is not None else np.ndindex(*x.shape):
            original = x.data[idx]
            x.data[idx] = original + eps
            plus = fn().item()
            x.data[idx] = original - eps
            minus = fn().item()
            x.data[idx] = original
            grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradCheckResult:
    max_error: float
    worst: str
    errors: Dict[str, float]
    passed: bool


def check_gradients(
    fn: LossFn,
    tensors: Sequence[Tuple[str, Tensor]],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare backprop gradients of fn() with central differences.

    An entry passes when |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).

    Args:
        fn: Builds the scalar loss from the current tensor values
        tensors: (name, tensor) pairs to check
        eps: Finite-difference step
        rtol: Relative tolerance
        atol: Absolute tolerance for entries whose gradient is ~0
        max_entries: When set, check at most this many randomly chosen entries per tensor
        seed: Seed of the entry sampler

    Returns:
        GradCheckResult with the worst relative error per tensor
    """
    for _, t in tensors:
        t.zero_grad()
    fn().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors}

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    passed = True
    for name, t in tensors:
        indices: List[Tuple[int, ...]] = list(np.ndindex(*t.shape))
        if max_entries is not None and len(indices) > max_entries:
            picks = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picks)]
        numeric = numerical_gradient(fn, t, eps, indices)
        rows = tuple(np.array(indices).T) if indices and t.ndim else ()
        a = analytic[name][rows] if rows else analytic[name].reshape(-1)[:1]
        n = numeric[rows] if rows else numeric.reshape(-1)[:1]
        errors[name] = float(relative_error(a, n).max()) if a.size else 0.0
        if not np.all(np.abs(a - n) <= atol + rtol * np.maximum(np.abs(a), np.abs(n))):
            passed = False
            logger.warning(f"Gradient mismatch in {name}: max relative error {errors[name]:.3e}")

    worst = max(errors, key=errors.get) if errors else ""
    return GradCheckResult(max_error=errors.get(worst, 0.0), worst=worst, errors=errors, passed=passed)
