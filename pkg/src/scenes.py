"""
Driving-episode data model: scenes of frames holding the ego pose, the agents
seen around it and traffic lights. Includes the scene/mask file formats and a
seedable generator of synthetic scenes.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

from .errors import SceneFormatError

logger = logging.getLogger(__name__)

SCENES_HEADER = "trajkit-scenes v1"
MASK_HEADER = "trajkit-mask v1"

PathLike = Union[str, Path]


class AgentLabel(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    OTHER = "other"


class LightState(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"


class Motion(str, Enum):
    CONSTANT_VELOCITY = "constant_velocity"
    CONSTANT_TURN = "constant_turn"
    LANE_CHANGE = "lane_change"


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float


@dataclass(frozen=True)
class AgentState:
    track_id: str
    centroid: Tuple[float, float]
    yaw: float
    extent: Tuple[float, float]
    label: AgentLabel = AgentLabel.VEHICLE

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError(f"Agent {self.track_id} has non-positive extent {self.extent}")
        if not all(math.isfinite(v) for v in self.centroid):
            raise ValueError(f"Agent {self.track_id} has a non-finite centroid {self.centroid}")


@dataclass(frozen=True)
class TrafficLight:
    x: float
    y: float
    state: LightState


@dataclass(frozen=True)
class Frame:
    timestamp: float
    ego_pose: Pose
    agents: Tuple[AgentState, ...] = ()
    traffic_lights: Tuple[TrafficLight, ...] = ()

    def __post_init__(self):
        yaw = self.ego_pose.yaw
        if not -math.pi < yaw <= math.pi:
            raise ValueError(f"Ego yaw {yaw} outside (-pi, pi] at t={self.timestamp}")
        ids = [a.track_id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError(f"Duplicate agent track ids at t={self.timestamp}")


@dataclass(frozen=True)
class Scene:
    id: str
    frames: Tuple[Frame, ...] = ()

    def __post_init__(self):
        stamps = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError(f"Scene {self.id}: frame timestamps are not strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class AgentsMask:
    """Per (scene, track) usability flags; agents not listed are usable."""

    flags: Dict[Tuple[str, str], bool] = field(default_factory=dict)

    def is_usable(self, scene_id: str, track_id: str) -> bool:
        return self.flags.get((scene_id, track_id), True)

    def set(self, scene_id: str, track_id: str, usable: bool) -> None:
        self.flags[(scene_id, track_id)] = usable

    def __len__(self) -> int:
        return len(self.flags)


# Scene file format


def _scene_to_record(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "frames": [
            {
                "t": f.timestamp,
                "ego": [f.ego_pose.x, f.ego_pose.y, f.ego_pose.yaw],
                "agents": [
                    {
                        "tid": a.track_id,
                        "x": a.centroid[0],
                        "y": a.centroid[1],
                        "yaw": a.yaw,
                        "l": a.extent[0],
                        "w": a.extent[1],
                        "label": a.label.value,
                    }
                    for a in f.agents
                ],
                "lights": [{"x": tl.x, "y": tl.y, "state": tl.state.value} for tl in f.traffic_lights],
            }
            for f in scene.frames
        ],
    }


def _record_to_scene(record: dict) -> Scene:
    if set(record) != {"id", "frames"}:
        raise KeyError(f"scene keys must be exactly id, frames; got {sorted(record)}")
    frames = []
    for fr in record["frames"]:
        x, y, yaw = fr["ego"]
        agents = tuple(
            AgentState(
                track_id=str(a["tid"]),
                centroid=(float(a["x"]), float(a["y"])),
                yaw=float(a["yaw"]),
                extent=(float(a["l"]), float(a["w"])),
                label=AgentLabel(a["label"]),
            )
            for a in fr["agents"]
        )
        lights = tuple(
            TrafficLight(float(tl["x"]), float(tl["y"]), LightState(tl["state"])) for tl in fr["lights"]
        )
        frames.append(Frame(float(fr["t"]), Pose(float(x), float(y), float(yaw)), agents, lights))
    return Scene(str(record["id"]), tuple(frames))


def write_scenes(scenes: Iterable[Scene], path: PathLike) -> None:
    """Write scenes as UTF-8, one JSON object per line after a version header."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(SCENES_HEADER + "\n")
        for scene in scenes:
            f.write(json.dumps(_scene_to_record(scene), separators=(",", ":"), allow_nan=False) + "\n")


def read_scenes(path: PathLike) -> List[Scene]:
    path = Path(path)
    scenes = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != SCENES_HEADER:
            raise SceneFormatError(f"expected header '{SCENES_HEADER}', got '{header}'", line=1)
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scenes.append(_record_to_scene(record))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise SceneFormatError(f"malformed scene record: {str(e)}", line=line_no) from e
    logger.debug(f"Read {len(scenes)} scenes from {path}")
    return scenes


def write_mask(mask: AgentsMask, path: PathLike) -> None:
    path = Path(path)
    frame = pd.DataFrame(
        [(scene_id, track_id, int(usable)) for (scene_id, track_id), usable in mask.flags.items()],
        columns=["scene_id", "track_id", "usable"],
    )
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(MASK_HEADER + "\n")
        frame.to_csv(f, header=False, index=False, lineterminator="\n")


def read_mask(path: PathLike) -> AgentsMask:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != MASK_HEADER:
            raise SceneFormatError(f"expected header '{MASK_HEADER}', got '{header}'", line=1)
        try:
            frame = pd.read_csv(f, header=None, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError:
            return AgentsMask()
    if frame.shape[1] != 3:
        raise SceneFormatError(f"mask rows need 3 fields, got {frame.shape[1]}", line=2)
    mask = AgentsMask()
    for offset, (scene_id, track_id, usable) in enumerate(frame.itertuples(index=False, name=None)):
        if usable not in ("0", "1"):
            raise SceneFormatError(f"usable flag must be 0 or 1, got '{usable}'", line=offset + 2)
        mask.set(scene_id, track_id, usable == "1")
    return mask


# Synthetic scenes

_EXTENTS = {
    AgentLabel.VEHICLE: (4.5, 2.0),
    AgentLabel.PEDESTRIAN: (0.8, 0.8),
    AgentLabel.CYCLIST: (1.8, 0.7),
    AgentLabel.OTHER: (2.5, 1.5),
}

# Fixed offsets in the ego frame; footprints at these offsets never overlap the ego's
_AGENT_SLOTS = [(12.0, 0.0), (-12.0, 0.0), (4.0, 3.5), (-6.0, -3.5), (18.0, 3.5), (0.0, -7.0)]

LANE_WIDTH = 3.5


def _ego_track(
    motion: Motion,
    rng: np.random.Generator,
    num_frames: int,
    dt: float,
    speed_range: Tuple[float, float],
) -> List[Pose]:
    x0, y0 = rng.uniform(-200.0, 200.0, size=2)
    yaw0 = float(rng.uniform(-math.pi, math.pi))
    speed = float(rng.uniform(*speed_range))
    times = np.arange(num_frames) * dt
    poses = []
    if motion == Motion.CONSTANT_VELOCITY:
        for t in times:
            poses.append(Pose(x0 + speed * t * math.cos(yaw0), y0 + speed * t * math.sin(yaw0), wrap_angle(yaw0)))
    elif motion == Motion.CONSTANT_TURN:
        rate = float(rng.uniform(0.05, 0.3)) * (1.0 if rng.random() < 0.5 else -1.0)
        radius = speed / rate
        for t in times:
            heading = yaw0 + rate * t
            poses.append(
                Pose(
                    x0 + radius * (math.sin(heading) - math.sin(yaw0)),
                    y0 - radius * (math.cos(heading) - math.cos(yaw0)),
                    wrap_angle(heading),
                )
            )
    else:
        # Sigmoid lateral profile centered mid-scene
        side = 1.0 if rng.random() < 0.5 else -1.0
        steepness = float(rng.uniform(1.0, 3.0))
        t_mid = times[-1] / 2.0 if num_frames > 1 else 0.0
        for t in times:
            s = 1.0 / (1.0 + math.exp(-steepness * (t - t_mid)))
            lateral = side * LANE_WIDTH * s
            lateral_rate = side * LANE_WIDTH * steepness * s * (1.0 - s)
            heading = yaw0 + math.atan2(lateral_rate, speed)
            along = speed * t
            poses.append(
                Pose(
                    x0 + along * math.cos(yaw0) - lateral * math.sin(yaw0),
                    y0 + along * math.sin(yaw0) + lateral * math.cos(yaw0),
                    wrap_angle(heading),
                )
            )
    return poses


def _light_state(phase: float, t: float) -> LightState:
    # 8 s cycle: green 4 s, yellow 1 s, red 3 s
    cycle = (t + phase) % 8.0
    if cycle < 4.0:
        return LightState.GREEN
    if cycle < 5.0:
        return LightState.YELLOW
    return LightState.RED


def generate_synthetic(
    seed: int,
    num_scenes: int,
    frames_per_scene: int,
    motion: Union[Motion, str] = Motion.CONSTANT_VELOCITY,
    dt: float = 0.1,
    max_agents: int = 4,
    max_lights: int = 2,
    speed_range: Tuple[float, float] = (5.0, 15.0),
) -> List[Scene]:
    """
    Generate deterministic synthetic scenes.

    Agents ride along with the ego at fixed offsets in the ego frame, so they
    never collide with it whatever the ego's motion.
    """
    if num_scenes < 0 or frames_per_scene < 1:
        raise ValueError(f"Need num_scenes >= 0 and frames_per_scene >= 1, got {num_scenes}, {frames_per_scene}")
    motion = Motion(motion)
    rng = np.random.default_rng(seed)
    labels = list(AgentLabel)
    scenes = []
    for index in range(num_scenes):
        poses = _ego_track(motion, rng, frames_per_scene, dt, speed_range)
        num_agents = int(rng.integers(0, min(max_agents, len(_AGENT_SLOTS)) + 1))
        slots = rng.choice(len(_AGENT_SLOTS), size=num_agents, replace=False)
        agent_labels = [labels[int(i)] for i in rng.integers(0, len(labels), size=num_agents)]
        num_lights = int(rng.integers(0, max_lights + 1))
        lights = [
            (float(rng.uniform(5.0, 40.0)), float(rng.uniform(-8.0, 8.0)), float(rng.uniform(0.0, 8.0)))
            for _ in range(num_lights)
        ]
        origin = poses[0]
        cos0, sin0 = math.cos(origin.yaw), math.sin(origin.yaw)

        frames = []
        for step, pose in enumerate(poses):
            t = step * dt
            c, s = math.cos(pose.yaw), math.sin(pose.yaw)
            agents = tuple(
                AgentState(
                    track_id=f"agent-{j}",
                    centroid=(
                        pose.x + _AGENT_SLOTS[slot][0] * c - _AGENT_SLOTS[slot][1] * s,
                        pose.y + _AGENT_SLOTS[slot][0] * s + _AGENT_SLOTS[slot][1] * c,
                    ),
                    yaw=pose.yaw,
                    extent=_EXTENTS[label],
                    label=label,
                )
                for j, (slot, label) in enumerate(zip(slots, agent_labels))
            )
            # Lights are fixed in the world, placed ahead of the initial pose
            frame_lights = tuple(
                TrafficLight(
                    origin.x + ahead * cos0 - side * sin0,
                    origin.y + ahead * sin0 + side * cos0,
                    _light_state(phase, t),
                )
                for ahead, side, phase in lights
            )
            frames.append(Frame(t, pose, agents, frame_lights))
        scenes.append(Scene(f"scene-{seed}-{index:05d}", tuple(frames)))
    logger.info(f"Generated {num_scenes} {motion.value} scenes with {frames_per_scene} frames each")
    return scenes


def generate_mask(scenes: Iterable[Scene], seed: int, drop_fraction: float = 0.1) -> AgentsMask:
    """Flag every track of every scene, marking roughly drop_fraction of them unusable."""
    if not 0.0 <= drop_fraction <= 1.0:
        raise ValueError(f"drop_fraction must lie in [0, 1], got {drop_fraction}")
    rng = np.random.default_rng(seed)
    mask = AgentsMask()
    for scene in scenes:
        track_ids = sorted({a.track_id for f in scene.frames for a in f.agents})
        for track_id in track_ids:
            mask.set(scene.id, track_id, bool(rng.random() >= drop_fraction))
    return mask
