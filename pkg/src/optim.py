"""
Rectified Adam and plain SGD.

The step functions are pure: they take parameter and gradient arrays plus an
OptimizerState and return new arrays. The RAdam/SGD classes apply them to a
model's Tensors in place.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(
        cls,
        params: Sequence[np.ndarray],
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "OptimizerState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            t=0,
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )

    @property
    def rho_inf(self) -> float:
        return 2.0 / (1.0 - self.beta2) - 1.0

    def rho(self, t: int) -> float:
        """Length of the approximated simple moving average at step t."""
        b2t = self.beta2**t
        return self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

    def rectification(self, t: int) -> Optional[float]:
        """Variance rectification factor at step t, or None when the variance is intractable (rho <= 4)."""
        rho_t = self.rho(t)
        if rho_t <= 4.0:
            return None
        rho_inf = self.rho_inf
        return math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))


def _check_shapes(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Optional[OptimizerState]) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"Got {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"Parameter {i} has shape {np.shape(p)} but its gradient has {np.shape(g)}")
        if state is not None and (state.m[i].shape != np.shape(p) or state.v[i].shape != np.shape(p)):
            raise ShapeError(f"Optimizer state {i} has shape {state.m[i].shape}, parameter has {np.shape(p)}")


def radam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
) -> Tuple[List[np.ndarray], OptimizerState]:
    """One rectified-Adam update; returns new parameters and a new state."""
    if len(state.m) != len(params):
        raise ShapeError(f"Optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    _check_shapes(params, grads, state)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    rect = state.rectification(t)

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / bias1
        if rect is None:
            update = state.lr * m_hat
        else:
            v_hat = np.sqrt(v / bias2)
            update = state.lr * rect * m_hat / (v_hat + state.eps)
        new_params.append(np.asarray(p - update, dtype=np.asarray(p).dtype))
        new_m.append(m)
        new_v.append(v)

    new_state = OptimizerState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_params, new_state


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> List[np.ndarray]:
    """p <- p - lr * g."""
    _check_shapes(params, grads, None)
    return [np.asarray(p - lr * np.asarray(g), dtype=np.asarray(p).dtype) for p, g in zip(params, grads)]


def _grads_of(params: Sequence[Tensor]) -> List[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


class RAdam:
    """Rectified Adam over a fixed list of Tensors."""

    name = "radam"

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ValueError(f"Learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.state = OptimizerState.for_params([p.data for p in self.params], lr, beta1, beta2, eps)

    def step(self) -> None:
        new_params, self.state = radam_step([p.data for p in self.params], _grads_of(self.params), self.state)
        for p, data in zip(self.params, new_params):
            p.data = data

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "lr": self.state.lr,
            "beta1": self.state.beta1,
            "beta2": self.state.beta2,
            "eps": self.state.eps,
            "t": self.state.t,
            "m": [m.copy() for m in self.state.m],
            "v": [v.copy() for v in self.state.v],
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if len(state["m"]) != len(self.params) or len(state["v"]) != len(self.params):
            raise ShapeError(f"State holds {len(state['m'])} moments for {len(self.params)} parameters")
        loaded = OptimizerState(
            lr=float(state["lr"]),
            beta1=float(state["beta1"]),
            beta2=float(state["beta2"]),
            eps=float(state["eps"]),
            t=int(state["t"]),
            m=[np.array(m, dtype=np.float64) for m in state["m"]],
            v=[np.array(v, dtype=np.float64) for v in state["v"]],
        )
        _check_shapes([p.data for p in self.params], loaded.m, loaded)
        self.state = loaded


class SGD:
    """Plain stochastic gradient descent."""

    name = "sgd"

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-5):
        if lr < 0:
            raise ValueError(f"Learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.t = 0

    def step(self) -> None:
        new_params = sgd_step([p.data for p in self.params], _grads_of(self.params), self.lr)
        for p, data in zip(self.params, new_params):
            p.data = data
        self.t += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "lr": self.lr, "t": self.t, "m": [], "v": []}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.lr = float(state["lr"])
        self.t = int(state["t"])


def make_optimizer(
    name: str,
    params: Sequence[Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    if name == "radam":
        return RAdam(params, lr, beta1, beta2, eps)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"Unknown optimizer: {name}")
