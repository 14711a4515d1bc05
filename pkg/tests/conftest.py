import numpy as np
import pytest

from src.config import RasterConfig, TrainConfig
from src.scaling import BaseArchitecture, HeadConfig, ScalingCoefficients
from src.scenes import generate_synthetic
from src.tensor import set_default_dtype

# Smallest model used across the suite: two single-block stages, 8 channels, 32 px
TINY_HISTORY = 1
TINY_FUTURE = 3
TINY_MODES = 2

IDENTITY_COEFFS = ScalingCoefficients(1.2, 1.1, 1.15, phi=0.0)


@pytest.fixture(autouse=True)
def _float64():
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_raster():
    return RasterConfig(size_px=32, resolution=0.5, history_frames=TINY_HISTORY, future_frames=TINY_FUTURE)


@pytest.fixture
def tiny_base(tiny_raster):
    return BaseArchitecture(
        stage_layers=(1, 1),
        stage_channels=(8, 8),
        input_resolution=32,
        in_channels=tiny_raster.num_channels,
        head=HeadConfig(TINY_MODES, TINY_FUTURE),
    )


@pytest.fixture
def tiny_corpus():
    return generate_synthetic(seed=7, num_scenes=12, frames_per_scene=12, max_agents=2, max_lights=1)


@pytest.fixture
def tiny_train_config(tmp_path, tiny_raster):
    return TrainConfig(
        learning_rate=1e-3,
        batch_size=4,
        epochs=1,
        seed=0,
        eval_fraction=0.25,
        sample_stride=3,
        checkpoint_dir=tmp_path / "checkpoints",
        log_dir=tmp_path / "logs",
        raster=tiny_raster,
    )
