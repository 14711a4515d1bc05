"""
Compound scaling of depth, width and input resolution.

Depth, width and resolution multipliers are d = alpha^phi, w = beta^phi and
r = gamma^phi, with alpha * beta^2 * gamma^2 kept close to 2 so that each unit
of phi roughly doubles the compute. The base coefficients are picked by a grid
search at phi = 1.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConstraintError, ScalingError, SearchError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.1
DEFAULT_GRID_STEP = 0.05
DEFAULT_GRID_UPPER = 2.0


@dataclass(frozen=True)
class ScalingCoefficients:
    alpha: float = 1.2
    beta: float = 1.1
    gamma: float = 1.15
    phi: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 1.0:
                raise ScalingError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.phi < 0:
            raise ScalingError(f"phi must be >= 0, got {self.phi}")

    @property
    def product(self) -> float:
        return self.alpha * self.beta**2 * self.gamma**2

    @property
    def residual(self) -> float:
        return abs(self.product - 2.0)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class ScalingMultipliers:
    d: float = 1.0
    w: float = 1.0
    r: float = 1.0

    def __post_init__(self):
        if min(self.d, self.w, self.r) < 1.0:
            raise ValueError(f"Multipliers must be >= 1, got {(self.d, self.w, self.r)}")


@dataclass(frozen=True)
class HeadConfig:
    num_modes: int = 3
    future_frames: int = 16


@dataclass(frozen=True)
class BaseArchitecture:
    """
    The unscaled backbone: stage depths, stage widths and input resolution.

    Stage 0 runs at stride 1, every later stage halves the spatial size.
    """

    stage_layers: Tuple[int, ...] = (2, 2, 2, 2)
    stage_channels: Tuple[int, ...] = (16, 32, 64, 128)
    input_resolution: int = 64
    in_channels: int = 11
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        object.__setattr__(self, "stage_layers", tuple(int(v) for v in self.stage_layers))
        object.__setattr__(self, "stage_channels", tuple(int(v) for v in self.stage_channels))
        if len(self.stage_layers) != len(self.stage_channels) or not self.stage_layers:
            raise ValueError(
                f"stage_layers and stage_channels must be non-empty and of equal length, "
                f"got {self.stage_layers} and {self.stage_channels}"
            )
        if min(self.stage_layers) < 1 or self.in_channels < 1:
            raise ValueError(f"Stage layer counts and input channels must be positive: {self.stage_layers}")
        if any(c < 8 or c % 8 for c in self.stage_channels):
            raise ValueError(f"Stage channels must be positive multiples of 8, got {self.stage_channels}")
        if self.input_resolution < 32 or self.input_resolution % 32:
            raise ValueError(f"Input resolution must be a positive multiple of 32, got {self.input_resolution}")
        if self.input_resolution % (2**self.num_striding_stages):
            raise ValueError(
                f"Input resolution {self.input_resolution} is not divisible by 2^{self.num_striding_stages}"
            )

    @property
    def num_striding_stages(self) -> int:
        return len(self.stage_layers) - 1

    def stage_stride(self, index: int) -> int:
        return 1 if index == 0 else 2

    def stage_resolution(self, index: int) -> int:
        return self.input_resolution // (2**index)


def derive_multipliers(c: ScalingCoefficients) -> ScalingMultipliers:
    return ScalingMultipliers(d=c.alpha**c.phi, w=c.beta**c.phi, r=c.gamma**c.phi)


def check_constraint(c: ScalingCoefficients, tol: float = DEFAULT_TOLERANCE) -> bool:
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    return c.residual <= tol


def require_constraint(c: ScalingCoefficients, tol: float = DEFAULT_TOLERANCE) -> None:
    if not check_constraint(c, tol):
        raise ConstraintError(c.product, tol)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _round_up_to(value: int, multiple: int) -> int:
    return max(multiple, -(-value // multiple) * multiple)


def apply_scaling(base: BaseArchitecture, m: ScalingMultipliers) -> BaseArchitecture:
    """
    Scale a base architecture.

    Layers become ceil(d * layers); channels round(w * channels) rounded up to a
    multiple of 8; resolution round(r * resolution) rounded up to a multiple of 32.
    """
    # round(., 9) keeps products like 1.1 * 30 from landing a hair above an integer
    layers = tuple(math.ceil(round(m.d * n, 9)) for n in base.stage_layers)
    channels = tuple(_round_up_to(_round_half_up(m.w * c), 8) for c in base.stage_channels)
    resolution = _round_up_to(_round_half_up(m.r * base.input_resolution), 32)
    return replace(base, stage_layers=layers, stage_channels=channels, input_resolution=resolution)


def scale(base: BaseArchitecture, c: ScalingCoefficients) -> BaseArchitecture:
    return apply_scaling(base, derive_multipliers(c))


def flops_proxy(arch: BaseArchitecture) -> float:
    """Σ layers · channels² · (resolution / 2^stage)²."""
    return float(
        sum(
            layers * channels**2 * (arch.input_resolution / 2**i) ** 2
            for i, (layers, channels) in enumerate(zip(arch.stage_layers, arch.stage_channels))
        )
    )


ScoreFunction = Callable[[BaseArchitecture, ScalingCoefficients], float]


def constraint_score(base: BaseArchitecture, coeffs: ScalingCoefficients) -> float:
    """Score that prefers products closest to 2."""
    return -coeffs.residual


def grid_values(step: float, upper: float = DEFAULT_GRID_UPPER) -> List[float]:
    if step <= 0:
        raise ValueError(f"Grid step must be positive, got {step}")
    count = int(math.floor((upper - 1.0) / step + 1e-9))
    return [round(1.0 + i * step, 10) for i in range(count + 1)]


@dataclass
class GridSearchResult:
    best: ScalingCoefficients
    best_score: float
    report: pd.DataFrame


def run_grid_search(
    base: BaseArchitecture,
    evaluate: ScoreFunction,
    grid_step: float = DEFAULT_GRID_STEP,
    tol: float = DEFAULT_TOLERANCE,
    upper: float = DEFAULT_GRID_UPPER,
    workers: int = 0,
) -> GridSearchResult:
    """
    Evaluate every feasible (alpha, beta, gamma) grid point at phi = 1.

    Points are visited in lexicographic order and only a strictly higher score
    replaces the incumbent, so ties go to the smallest triple no matter how
    evaluations are scheduled.
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    values = grid_values(grid_step, upper)
    points = [ScalingCoefficients(a, b, g, 1.0) for a in values for b in values for g in values]
    feasible = [p for p in points if check_constraint(p, tol)]
    logger.info(f"Grid search: {len(points)} grid points, {len(feasible)} feasible at tol={tol}")
    if not feasible:
        raise SearchError(f"No grid point satisfies |alpha*beta^2*gamma^2 - 2| <= {tol} (step {grid_step})")

    def _score(point: ScalingCoefficients) -> float:
        return float(evaluate(base, point))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score, feasible))
    else:
        scores = [_score(p) for p in feasible]

    score_of = {p.as_tuple(): s for p, s in zip(feasible, scores)}
    best: Optional[ScalingCoefficients] = None
    best_score = -math.inf
    for point, score in zip(feasible, scores):
        # a NaN score ranks below every number
        rank = -math.inf if math.isnan(score) else score
        if best is None or rank > best_score:
            best, best_score = point, rank

    report = pd.DataFrame(
        {
            "alpha": [p.alpha for p in points],
            "beta": [p.beta for p in points],
            "gamma": [p.gamma for p in points],
            "product": [p.product for p in points],
            "score": [score_of.get(p.as_tuple(), np.nan) for p in points],
            "feasible": [p.as_tuple() in score_of for p in points],
        }
    )
    logger.info(
        f"Best grid point alpha={best.alpha} beta={best.beta} gamma={best.gamma} "
        f"product={best.product:.4f} score={best_score:.6f}"
    )
    return GridSearchResult(best=best, best_score=best_score, report=report)


def grid_search(
    base: BaseArchitecture,
    evaluate: ScoreFunction,
    grid_step: float = DEFAULT_GRID_STEP,
    tol: float = DEFAULT_TOLERANCE,
    upper: float = DEFAULT_GRID_UPPER,
    workers: int = 0,
) -> ScalingCoefficients:
    return run_grid_search(base, evaluate, grid_step, tol, upper, workers).best
