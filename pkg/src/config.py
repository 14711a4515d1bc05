"""
Configuration models for rasterization, training and process settings.
"""
import os
from pathlib import Path
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class RasterConfig(BaseModel):
    """Geometry of the bird's-eye-view raster and the sample horizon."""

    model_config = ConfigDict(frozen=True)

    size_px: int = Field(64, gt=0)
    resolution: float = Field(0.5, gt=0)
    history_frames: int = Field(4, ge=0)
    future_frames: int = Field(16, gt=0)
    ego_center: Tuple[float, float] = (0.25, 0.5)
    ego_extent: Tuple[float, float] = (4.5, 2.0)

    @field_validator("ego_center")
    @classmethod
    def _center_in_unit_square(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= v <= 1.0 for v in value):
            raise ValueError(f"ego_center must lie in [0,1]^2, got {value}")
        return value

    @field_validator("ego_extent")
    @classmethod
    def _extent_positive(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(v > 0 for v in value):
            raise ValueError(f"ego_extent must be positive, got {value}")
        return value

    @property
    def num_channels(self) -> int:
        # (H+1) ego layers, (H+1) agent layers, one traffic-light layer
        return 2 * self.history_frames + 3

    @property
    def min_scene_frames(self) -> int:
        return self.history_frames + self.future_frames + 1


class TrainConfig(BaseModel):
    """Hyperparameters and paths of a training run."""

    learning_rate: float = Field(1e-5, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(1, ge=0)
    seed: int = 0
    optimizer: Literal["radam", "sgd"] = "radam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    eval_fraction: float = Field(0.2, gt=0, lt=1)
    sample_stride: int = Field(5, ge=1)
    workers: int = Field(0, ge=0)
    log_every: int = Field(10, ge=1)
    progress: bool = False
    data_path: Optional[Path] = None
    mask_path: Optional[Path] = None
    checkpoint_dir: Path = Path("checkpoints")
    log_dir: Path = Path("logs")
    raster: RasterConfig = RasterConfig()


class Settings(BaseModel):
    """Process-wide settings, overridable from the environment or a .env file."""

    log_level: str = "INFO"
    precision: Literal["float64", "float32"] = "float64"
    workers: int = Field(0, ge=0)
    output_dir: Path = Path("outputs")

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {', '.join(LOG_LEVELS)}, got {value}")
        return level

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        return cls(
            log_level=os.getenv("TRAJKIT_LOG_LEVEL", "INFO"),
            precision=os.getenv("TRAJKIT_PRECISION", "float64"),
            workers=int(os.getenv("TRAJKIT_WORKERS", "0")),
            output_dir=Path(os.getenv("TRAJKIT_OUTPUT_DIR", "outputs")),
        )
