"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a `Function` subclass with a `forward` that
works on NumPy arrays and a `backward` that maps the gradient of the output to
gradients of the inputs. Applying a function records it on the output tensor,
and `Tensor.backward` walks the recorded graph in reverse topological order.
"""
import contextlib
import logging
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_DEFAULT_DTYPE: type = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype: Union[str, type]) -> None:
    """Select the scalar type of newly created tensors ("float64" or "float32")."""
    global _DEFAULT_DTYPE
    resolved = np.dtype(dtype).type
    if resolved not in (np.float64, np.float32):
        raise ValueError(f"Unsupported precision: {dtype}")
    _DEFAULT_DTYPE = resolved
    logger.debug(f"Default tensor dtype set to {np.dtype(resolved).name}")


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation and inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} is out of range for a tensor with {ndim} dimensions")
    return axis % ndim


def _check_broadcast(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...], op: str) -> None:
    try:
        out = np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} cannot be broadcast") from None
    if out != a_shape and out != b_shape:
        raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} would broadcast to a new shape {out}")


class Function:
    """Base class for differentiable operations."""

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum a broadcast gradient back down to the shape of the original operand."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, size in enumerate(to_shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


class Tensor:
    """
    An n-dimensional array that participates in a differentiation graph.

    Attributes:
        data: NumPy array holding the values (row-major)
        requires_grad: Whether gradients are accumulated for this tensor
        grad: Accumulated gradient with the same shape as data, or None
        creator: The Function that produced this tensor, None for leaves
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Populate .grad of every reachable tensor that requires gradients."""
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            logger.warning("backward() called on a tensor that does not require gradients")
            return

        graph = Graph.from_output(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(graph.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            node._accumulate(grad)
            if node.creator is None:
                continue
            input_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.tensors, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # Operator sugar
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, _as_tensor(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(_as_tensor(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, _as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(_as_tensor(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, _as_tensor(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(_as_tensor(other), self)

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("Division is only supported by a constant")
        return Mul.apply(self, _as_tensor(1.0 / other))

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> "Tensor":
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis)

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        return logsumexp(self, axis, keepdims)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        return log_softmax(self, axis)


def _as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Graph:
    """Ordered record of the operations leading to an output; inputs precede outputs."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(a.shape, b.shape, "add")
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.tensors
        return self.unbroadcast(grad, a.shape), self.unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(a.shape, b.shape, "sub")
        return a - b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.tensors
        return self.unbroadcast(grad, a.shape), self.unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(a.shape, b.shape, "mul")
        return a * b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.tensors
        return (
            self.unbroadcast(grad * b.data, a.shape),
            self.unbroadcast(grad * a.data, b.shape),
        )


class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (-grad,)


class Sum(Function):
    def forward(self, x: np.ndarray, axis: Any = None, keepdims: bool = False) -> np.ndarray:
        if axis is not None:
            axes = tuple(np.atleast_1d(axis))
            axis = tuple(_normalize_axis(int(a), x.ndim) for a in axes)
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (x,) = self.tensors
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, x.shape),)


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        return a @ b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.tensors
        return grad @ b.data.T, a.data.T @ grad


class Conv2d(Function):
    """2-D cross-correlation over N×C×H×W inputs, computed as a matrix product of unfolded windows."""

    def forward(self, x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        if x.ndim != 4 or kernel.ndim != 4:
            raise ShapeError(f"conv2d expects N×C×H×W input and O×C×kh×kw kernel, got {x.shape} and {kernel.shape}")
        if stride < 1 or padding < 0:
            raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride} and {padding}")
        n, c, h, w = x.shape
        o, kc, kh, kw = kernel.shape
        if c != kc:
            raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {kc}")
        hp, wp = h + 2 * padding, w + 2 * padding
        if kh > hp or kw > wp:
            raise ShapeError(f"conv2d kernel {kh}×{kw} is larger than the padded input {hp}×{wp}")

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.stride, self.padding = stride, padding
        self.padded = xp
        self.out_hw = ((hp - kh) // stride + 1, (wp - kw) // stride + 1)
        cols = self._unfold(xp, kh, kw)
        out = cols @ kernel.reshape(o, -1).T
        return np.ascontiguousarray(out.reshape(n, self.out_hw[0], self.out_hw[1], o).transpose(0, 3, 1, 2))

    def _unfold(self, xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
        n, c = xp.shape[:2]
        ho, wo = self.out_hw
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, :: self.stride, :: self.stride]
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x, kernel = self.tensors
        n, c, h, w = x.shape
        o, _, kh, kw = kernel.shape
        ho, wo = self.out_hw
        s, p = self.stride, self.padding

        g = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        d_kernel = (g.T @ self._unfold(self.padded, kh, kw)).reshape(kernel.shape)
        d_cols = (g @ kernel.data.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
        d_padded = np.zeros(self.padded.shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                d_padded[:, :, i : i + s * ho : s, j : j + s * wo : s] += d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        d_x = d_padded[:, :, p : p + h, p : p + w] if p else d_padded
        return d_x, d_kernel


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (x,) = self.tensors
        return (grad * (x.data > 0),)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"global_avg_pool expects N×C×H×W, got {x.shape}")
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (x,) = self.tensors
        h, w = x.shape[2:]
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), x.shape),)


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...] = ()) -> np.ndarray:
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (x,) = self.tensors
        return (grad.reshape(x.shape),)


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = _normalize_axis(axis, x.ndim)
        shifted = np.exp(x - x.max(axis=self.axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LogSumExp(Function):
    def forward(self, x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
        self.axis = _normalize_axis(axis, x.ndim)
        self.keepdims = keepdims
        peak = x.max(axis=self.axis, keepdims=True)
        shifted = np.exp(x - peak)
        total = shifted.sum(axis=self.axis, keepdims=True)
        self.weights = shifted / total
        out = peak + np.log(total)
        return out if keepdims else np.squeeze(out, axis=self.axis)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (grad * self.weights,)


class GetItem(Function):
    def forward(self, x: np.ndarray, index: Any = None) -> np.ndarray:
        self.index = index
        return np.array(x[index])

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (x,) = self.tensors
        out = np.zeros(x.shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Stack(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
        self.axis = _normalize_axis(axis, arrays[0].ndim + 1)
        return np.stack(arrays, axis=self.axis)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.take(grad, i, axis=self.axis) for i in range(len(self.tensors)))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may broadcast to a (or a to b) along leading or unit dimensions."""
    return Add.apply(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, kernel, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return LogSumExp.apply(x, axis=axis, keepdims=keepdims)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    return Stack.apply(*tensors, axis=axis)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))
