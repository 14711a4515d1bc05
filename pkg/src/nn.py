"""
Parameterized layers and residual blocks.
"""
import logging
import math
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, conv2d, matmul, relu

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    RELU = "relu"
    NONE = "none"


def _activate(x: Tensor, activation: Activation) -> Tensor:
    return relu(x) if activation == Activation.RELU else x


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in ±sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, (list, tuple)):
                        for j, sub in enumerate(item):
                            if isinstance(sub, Module):
                                yield from sub.named_parameters(f"{full}.{i}.{j}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class ConvBlock(Module):
    """Convolution + per-channel bias + optional relu."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        activation: Activation = Activation.RELU,
        rng: Optional[np.random.Generator] = None,
    ):
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ValueError(
                f"Invalid ConvBlock geometry: in={in_channels} out={out_channels} "
                f"k={kernel_size} stride={stride} padding={padding}"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.kernel = Tensor(
            uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(uniform_init(rng, (out_channels,), fan_in), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.activation = Activation(activation)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]

    def preserves_spatial_size(self) -> bool:
        return self.stride == 1 and 2 * self.padding == self.kernel_size - 1

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.kernel, stride=self.stride, padding=self.padding)
        out = out + self.bias.reshape(1, self.out_channels, 1, 1)
        return _activate(out, self.activation)


class Dense(Module):
    """Fully connected layer: x @ W + b."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(uniform_init(rng, (in_features, out_features), in_features), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_features,), in_features), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class ResidualBlock(Module):
    """
    Computes activation(F(x) + shortcut(x)).

    The shortcut is the identity when the residual path keeps channel count and
    spatial size, otherwise a 1×1 projection ConvBlock with the path's stride.
    """

    def __init__(
        self,
        f_path: Sequence[ConvBlock],
        shortcut: Optional[ConvBlock] = None,
        activation: Activation = Activation.RELU,
    ):
        if not f_path:
            raise ValueError("Residual path needs at least one ConvBlock")
        self.f_path = list(f_path)
        self.shortcut = shortcut
        self.activation = Activation(activation)

        preserves = self.f_path[0].in_channels == self.f_path[-1].out_channels and all(
            block.preserves_spatial_size() for block in self.f_path
        )
        if preserves and shortcut is not None:
            raise ValueError("Shape-preserving residual path must use the identity shortcut")
        if not preserves:
            if shortcut is None:
                raise ValueError("Shape-changing residual path needs a projection shortcut")
            if shortcut.kernel_size != 1:
                raise ValueError(f"Projection shortcut must be 1×1, got {shortcut.kernel_size}×{shortcut.kernel_size}")

    @classmethod
    def basic(
        cls,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ) -> "ResidualBlock":
        """Two 3×3 ConvBlocks; the first carries the stride."""
        rng = rng if rng is not None else np.random.default_rng(0)
        f_path = [
            ConvBlock(in_channels, out_channels, 3, stride, 1, Activation.RELU, rng),
            ConvBlock(out_channels, out_channels, 3, 1, 1, Activation.NONE, rng),
        ]
        shortcut = None
        if in_channels != out_channels or stride != 1:
            shortcut = ConvBlock(in_channels, out_channels, 1, stride, 0, Activation.NONE, rng)
        return cls(f_path, shortcut, Activation.RELU)

    @property
    def is_identity(self) -> bool:
        return self.shortcut is None

    def forward(self, x: Tensor) -> Tensor:
        return residual_forward(self, x)


def residual_forward(block: ResidualBlock, x: Tensor) -> Tensor:
    expected = block.f_path[0].in_channels
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"Residual block expects N×{expected}×H×W input, got {x.shape}")
    residual = x
    for conv in block.f_path:
        residual = conv(residual)
    skip = x if block.shortcut is None else block.shortcut(x)
    if residual.shape != skip.shape:
        raise ShapeError(f"Residual path output {residual.shape} does not match shortcut output {skip.shape}")
    return _activate(residual + skip, block.activation)


class PlainBlock(Module):
    """The same two-convolution path as ResidualBlock.basic, without a shortcut."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.f_path = [
            ConvBlock(in_channels, out_channels, 3, stride, 1, Activation.RELU, rng),
            ConvBlock(out_channels, out_channels, 3, 1, 1, Activation.RELU, rng),
        ]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.f_path:
            x = conv(x)
        return x


def make_stage(
    num_blocks: int,
    in_channels: int,
    out_channels: int,
    stride: int,
    rng: Optional[np.random.Generator] = None,
    block: str = "residual",
) -> List[Module]:
    """
    Build a stage of blocks.

    The first block carries the stride and the channel change; the rest are
    stride-1, channel-preserving (identity shortcut for residual blocks).
    """
    if min(num_blocks, in_channels, out_channels, stride) < 1:
        raise ValueError(
            f"make_stage arguments must be positive: num_blocks={num_blocks} "
            f"in={in_channels} out={out_channels} stride={stride}"
        )
    if block not in ("residual", "plain"):
        raise ValueError(f"Unknown block type: {block}")
    rng = rng if rng is not None else np.random.default_rng(0)
    factory = ResidualBlock.basic if block == "residual" else PlainBlock
    blocks: List[Module] = [factory(in_channels, out_channels, stride, rng)]
    for _ in range(num_blocks - 1):
        blocks.append(factory(out_channels, out_channels, 1, rng))
    return blocks


def conv_block_parameter_count(in_channels: int, out_channels: int, kernel_size: int) -> int:
    return out_channels * in_channels * kernel_size * kernel_size + out_channels


def stage_parameter_count(
    num_blocks: int,
    in_channels: int,
    out_channels: int,
    kernel_size: int = 3,
    stride: int = 1,
    block: str = "residual",
) -> int:
    """Closed-form parameter count of make_stage(...)."""
    first = conv_block_parameter_count(in_channels, out_channels, kernel_size) + conv_block_parameter_count(
        out_channels, out_channels, kernel_size
    )
    if block == "residual" and (in_channels != out_channels or stride != 1):
        first += conv_block_parameter_count(in_channels, out_channels, 1)
    rest = 2 * conv_block_parameter_count(out_channels, out_channels, kernel_size)
    return first + (num_blocks - 1) * rest
