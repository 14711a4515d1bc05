"""
The hybrid trajectory model: a residual backbone whose depth, width and input
resolution come from compound scaling, followed by a multimodal head.
"""
import hashlib
import logging
from typing import Optional

import numpy as np

from .errors import ShapeError
from .losses import TrajectoryPrediction
from .nn import (
    Activation,
    ConvBlock,
    Dense,
    Module,
    conv_block_parameter_count,
    make_stage,
    stage_parameter_count,
)
from .scaling import (
    DEFAULT_TOLERANCE,
    BaseArchitecture,
    HeadConfig,
    ScalingCoefficients,
    flops_proxy,
    require_constraint,
    scale,
)
from .tensor import Tensor, global_avg_pool

logger = logging.getLogger(__name__)

# variant -> (block type, compound scaled)
VARIANTS = {
    "hybrid": ("residual", True),
    "resnet": ("residual", False),
    "efficientnet": ("plain", True),
}


class HybridModel(Module):
    """
    Stem ConvBlock, scaled stages, then global average pooling and one dense
    layer emitting K·T·2 trajectory coordinates followed by K confidence logits.
    """

    def __init__(
        self,
        arch: BaseArchitecture,
        rng: Optional[np.random.Generator] = None,
        block: str = "residual",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.arch = arch
        self.block = block
        self.variant = "hybrid" if block == "residual" else "efficientnet"
        self.coeffs: Optional[ScalingCoefficients] = None
        self.seed: Optional[int] = None
        self.num_modes = arch.head.num_modes
        self.future_frames = arch.head.future_frames
        if self.num_modes < 1 or self.future_frames < 1:
            raise ValueError(f"Need K >= 1 and T >= 1, got K={self.num_modes} T={self.future_frames}")

        channels = arch.stage_channels
        self.stem = ConvBlock(arch.in_channels, channels[0], 3, 1, 1, Activation.RELU, rng)
        self.stages = []
        in_channels = channels[0]
        for i, (layers, out_channels) in enumerate(zip(arch.stage_layers, channels)):
            self.stages.append(make_stage(layers, in_channels, out_channels, arch.stage_stride(i), rng, block))
            in_channels = out_channels
        self.head = Dense(channels[-1], self.output_size, rng)

    @property
    def output_size(self) -> int:
        return self.num_modes * self.future_frames * 2 + self.num_modes

    @property
    def input_resolution(self) -> int:
        return self.arch.input_resolution

    def zero_head(self) -> None:
        self.head.weight.data = np.zeros_like(self.head.weight.data)
        self.head.bias.data = np.zeros_like(self.head.bias.data)

    def forward(self, raster: Tensor) -> TrajectoryPrediction:
        batched = raster.ndim == 4
        x = raster if batched else raster.reshape(1, *raster.shape)
        expected = (self.arch.in_channels, self.input_resolution, self.input_resolution)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"Model expects input of shape (N,) + {expected}, received {raster.shape}")

        x = self.stem(x)
        for stage in self.stages:
            for block in stage:
                x = block(x)
        out = self.head(global_avg_pool(x))

        n, k, t = x.shape[0], self.num_modes, self.future_frames
        split = k * t * 2
        hypotheses = out[:, :split].reshape(n, k, t, 2)
        logits = out[:, split:]
        if not batched:
            hypotheses = hypotheses.reshape(k, t, 2)
            logits = logits.reshape(k)
        return TrajectoryPrediction(hypotheses, logits)


def count_parameters(arch: BaseArchitecture, block: str = "residual") -> int:
    """Closed-form parameter count of HybridModel(arch, block=block)."""
    channels = arch.stage_channels
    total = conv_block_parameter_count(arch.in_channels, channels[0], 3)
    in_channels = channels[0]
    for i, (layers, out_channels) in enumerate(zip(arch.stage_layers, channels)):
        total += stage_parameter_count(layers, in_channels, out_channels, 3, arch.stage_stride(i), block)
        in_channels = out_channels
    k, t = arch.head.num_modes, arch.head.future_frames
    outputs = k * t * 2 + k
    return total + channels[-1] * outputs + outputs


def build(
    base: BaseArchitecture,
    coeffs: ScalingCoefficients,
    num_modes: Optional[int] = None,
    future_frames: Optional[int] = None,
    seed: int = 0,
    tol: float = DEFAULT_TOLERANCE,
    variant: str = "hybrid",
) -> HybridModel:
    """
    Build a model from a base architecture and scaling coefficients.

    Args:
        base: Unscaled architecture
        coeffs: Compound scaling coefficients; must satisfy the constraint at tol
        num_modes: K, defaults to base.head
        future_frames: T, defaults to base.head
        seed: Initialization seed
        tol: Constraint tolerance
        variant: "hybrid", "resnet" (unscaled residual) or "efficientnet" (scaled plain blocks)

    Returns:
        Initialized HybridModel
    """
    if variant not in VARIANTS:
        raise ValueError(f"Unknown model variant: {variant}")
    block, scaled = VARIANTS[variant]
    head = HeadConfig(
        num_modes=num_modes if num_modes is not None else base.head.num_modes,
        future_frames=future_frames if future_frames is not None else base.head.future_frames,
    )
    base = BaseArchitecture(base.stage_layers, base.stage_channels, base.input_resolution, base.in_channels, head)
    if scaled:
        require_constraint(coeffs, tol)
        arch = scale(base, coeffs)
    else:
        arch = base

    model = HybridModel(arch, np.random.default_rng(seed), block)
    model.coeffs = coeffs
    model.variant = variant
    model.seed = seed
    logger.info(
        f"Built {variant} model: layers={list(arch.stage_layers)} channels={list(arch.stage_channels)} "
        f"resolution={arch.input_resolution} params={model.num_parameters()} flops_proxy={flops_proxy(arch):.0f}"
    )
    return model


def checkpoint_digest(model: Module) -> str:
    """sha256 over parameter names and their float64 little-endian bytes."""
    digest = hashlib.sha256()
    for name, param in model.named_parameters():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(param.data, dtype="<f8").tobytes())
    return digest.hexdigest()
