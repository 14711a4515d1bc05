"""
Bird's-eye-view rasterization of scenes into model inputs and ego trajectory targets.

The raster frame is centered on the ego pose of the sampled frame: the ego
heading points toward +x (columns), and the ego sits at ego_center * size_px.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import RasterConfig
from .scenes import AgentsMask, LightState, Pose, Scene

logger = logging.getLogger(__name__)

OFFSET_DECIMALS = 9

LIGHT_VALUES = {
    LightState.RED: 1.0,
    LightState.YELLOW: 0.5,
    LightState.GREEN: 0.25,
}


@dataclass(frozen=True)
class Sample:
    raster: np.ndarray
    target: np.ndarray
    availability: np.ndarray
    scene_id: str
    frame_index: int

    @property
    def sample_id(self) -> str:
        return f"{self.scene_id}:{self.frame_index}"


def _to_ego_frame(point: Tuple[float, float], ego_pose: Pose) -> Tuple[float, float]:
    dx = point[0] - ego_pose.x
    dy = point[1] - ego_pose.y
    c, s = math.cos(ego_pose.yaw), math.sin(ego_pose.yaw)
    # snapped to 1e-9 m so that translating a whole scene leaves every offset bit-identical
    return round(c * dx + s * dy, OFFSET_DECIMALS), round(-s * dx + c * dy, OFFSET_DECIMALS)


def world_to_raster(point: Tuple[float, float], ego_pose: Pose, cfg: RasterConfig) -> Tuple[float, float]:
    """
    Map a world point (meters) to raster pixel coordinates (px along columns, py along rows).

    Out-of-bounds coordinates are returned as-is.
    """
    lx, ly = _to_ego_frame(point, ego_pose)
    px = lx / cfg.resolution + cfg.ego_center[0] * cfg.size_px
    py = ly / cfg.resolution + cfg.ego_center[1] * cfg.size_px
    return px, py


class _PixelGrid:
    """Ego-frame metric coordinates of every pixel center."""

    def __init__(self, cfg: RasterConfig):
        centers = np.arange(cfg.size_px) + 0.5
        self.mx = ((centers - cfg.ego_center[0] * cfg.size_px) * cfg.resolution)[None, :]
        self.my = ((centers - cfg.ego_center[1] * cfg.size_px) * cfg.resolution)[:, None]
        self.cfg = cfg

    def fill_box(
        self,
        layer: np.ndarray,
        center: Tuple[float, float],
        yaw: float,
        extent: Tuple[float, float],
    ) -> None:
        """Mark every pixel whose center lies inside the oriented rectangle."""
        c, s = math.cos(yaw), math.sin(yaw)
        dx = self.mx - center[0]
        dy = self.my - center[1]
        along = c * dx + s * dy
        across = -s * dx + c * dy
        inside = (np.abs(along) <= extent[0] / 2.0) & (np.abs(across) <= extent[1] / 2.0)
        if inside.any():
            layer[inside] = 1.0
            return
        # Footprints smaller than a pixel still mark the pixel holding their centroid
        size = self.cfg.size_px
        col = math.floor(center[0] / self.cfg.resolution + self.cfg.ego_center[0] * size)
        row = math.floor(center[1] / self.cfg.resolution + self.cfg.ego_center[1] * size)
        if 0 <= row < size and 0 <= col < size:
            layer[row, col] = 1.0


def _check_frame_window(scene: Scene, frame_index: int, cfg: RasterConfig, require_full_future: bool) -> None:
    count = len(scene.frames)
    history, future = cfg.history_frames, cfg.future_frames
    last_needed = frame_index + future if require_full_future else frame_index
    if frame_index < history or last_needed >= count:
        raise ValueError(
            f"Scene {scene.id}: frame {frame_index} needs {history} history frames before it and "
            f"{future} future frames after it (at least {cfg.min_scene_frames} frames); scene has {count}"
        )


def rasterize(
    scene: Scene,
    frame_index: int,
    cfg: RasterConfig,
    mask: Optional[AgentsMask] = None,
    require_full_future: bool = True,
) -> Sample:
    """
    Rasterize one (scene, frame) pair.

    Args:
        scene: Source scene
        frame_index: Index of the "current" frame
        cfg: Raster geometry and horizon
        mask: Agent usability flags; unlisted agents are usable
        require_full_future: When False, future steps past the end of the
            scene are marked unavailable instead of raising

    Returns:
        Sample with a (2H+3)×size×size raster, T×2 ego displacements in the
        raster frame (meters) and their availability flags
    """
    _check_frame_window(scene, frame_index, cfg, require_full_future)
    mask = mask if mask is not None else AgentsMask()
    history, future = cfg.history_frames, cfg.future_frames
    grid = _PixelGrid(cfg)
    ego = scene.frames[frame_index].ego_pose

    raster = np.zeros((cfg.num_channels, cfg.size_px, cfg.size_px), dtype=np.float64)
    for offset in range(history + 1):
        frame = scene.frames[frame_index - offset]
        ego_layer = raster[offset]
        agent_layer = raster[history + 1 + offset]

        past = frame.ego_pose
        grid.fill_box(ego_layer, _to_ego_frame((past.x, past.y), ego), past.yaw - ego.yaw, cfg.ego_extent)
        for agent in frame.agents:
            if not mask.is_usable(scene.id, agent.track_id):
                continue
            grid.fill_box(agent_layer, _to_ego_frame(agent.centroid, ego), agent.yaw - ego.yaw, agent.extent)

    light_layer = raster[2 * history + 2]
    for light in scene.frames[frame_index].traffic_lights:
        px, py = world_to_raster((light.x, light.y), ego, cfg)
        col, row = math.floor(px), math.floor(py)
        if 0 <= row < cfg.size_px and 0 <= col < cfg.size_px:
            light_layer[row, col] = max(light_layer[row, col], LIGHT_VALUES[light.state])

    target = np.zeros((future, 2), dtype=np.float64)
    availability = np.zeros(future, dtype=bool)
    for t in range(future):
        index = frame_index + 1 + t
        if index >= len(scene.frames):
            break
        pose = scene.frames[index].ego_pose
        target[t] = _to_ego_frame((pose.x, pose.y), ego)
        availability[t] = True

    return Sample(raster, target, availability, scene.id, frame_index)


class SceneDataset:
    """
    Index of extractable (scene, frame) samples, rasterized on demand.

    Frames are taken every `sample_stride` frames starting at the first frame
    with a full history.
    """

    def __init__(
        self,
        scenes: Sequence[Scene],
        cfg: RasterConfig,
        mask: Optional[AgentsMask] = None,
        sample_stride: int = 1,
        workers: int = 0,
    ):
        if sample_stride < 1:
            raise ValueError(f"sample_stride must be >= 1, got {sample_stride}")
        self.scenes = list(scenes)
        self.cfg = cfg
        self.mask = mask if mask is not None else AgentsMask()
        self.workers = workers
        self.index: List[Tuple[int, int]] = []
        for scene_idx, scene in enumerate(self.scenes):
            last = len(scene.frames) - cfg.future_frames
            for frame_index in range(cfg.history_frames, last, sample_stride):
                self.index.append((scene_idx, frame_index))
        logger.debug(f"Indexed {len(self.index)} samples from {len(self.scenes)} scenes")

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> Sample:
        scene_idx, frame_index = self.index[i]
        return rasterize(self.scenes[scene_idx], frame_index, self.cfg, self.mask)

    def sample_ids(self, indices: Sequence[int]) -> List[str]:
        return [f"{self.scenes[s].id}:{f}" for s, f in (self.index[i] for i in indices)]

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stack rasters, targets and availability of the given samples, in order."""
        indices = [int(i) for i in indices]
        if self.workers > 1 and len(indices) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                samples = list(pool.map(self.__getitem__, indices))
        else:
            samples = [self[i] for i in indices]
        rasters = np.stack([s.raster for s in samples])
        targets = np.stack([s.target for s in samples])
        availability = np.stack([s.availability for s in samples])
        return rasters, targets, availability
