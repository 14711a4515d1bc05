import math

import numpy as np
import pytest

from src.config import RasterConfig
from src.raster import LIGHT_VALUES, SceneDataset, rasterize, world_to_raster
from src.scenes import (
    AgentLabel,
    AgentsMask,
    AgentState,
    Frame,
    LightState,
    Motion,
    Pose,
    Scene,
    TrafficLight,
    generate_mask,
    generate_synthetic,
)

WIDE = RasterConfig(size_px=64, resolution=0.5, history_frames=2, future_frames=4)


def _scene(poses, agents=None, lights=None, scene_id="manual"):
    frames = []
    for i, pose in enumerate(poses):
        frames.append(
            Frame(
                timestamp=0.1 * i,
                ego_pose=pose,
                agents=tuple(agents[i]) if agents else (),
                traffic_lights=tuple(lights[i]) if lights else (),
            )
        )
    return Scene(scene_id, tuple(frames))


def _translate(scene, dx, dy):
    frames = []
    for f in scene.frames:
        frames.append(
            Frame(
                f.timestamp,
                Pose(f.ego_pose.x + dx, f.ego_pose.y + dy, f.ego_pose.yaw),
                tuple(
                    AgentState(a.track_id, (a.centroid[0] + dx, a.centroid[1] + dy), a.yaw, a.extent, a.label)
                    for a in f.agents
                ),
                tuple(TrafficLight(tl.x + dx, tl.y + dy, tl.state) for tl in f.traffic_lights),
            )
        )
    return Scene(scene.id, tuple(frames))


def test_world_to_raster_fixed_point():
    cfg = RasterConfig(size_px=224)
    ego = Pose(12.5, -3.0, 0.7)
    assert world_to_raster((12.5, -3.0), ego, cfg) == (56.0, 112.0)


def test_world_to_raster_hand_computed_pixel():
    cfg = RasterConfig(size_px=224, resolution=0.5, ego_center=(0.25, 0.5))
    assert world_to_raster((13.0, 4.0), Pose(3.0, 4.0, 0.0), cfg) == (76.0, 112.0)


def test_world_to_raster_rotated_ego_mirrors_across_center():
    cfg = RasterConfig(size_px=224)
    ego = Pose(0.0, 0.0, math.pi)
    ahead = world_to_raster((-10.0, 0.0), ego, cfg)
    behind = world_to_raster((10.0, 0.0), ego, cfg)
    assert ahead == pytest.approx((76.0, 112.0))
    assert behind == pytest.approx((2 * 56.0 - 76.0, 112.0))


def test_stationary_ego_without_agents():
    poses = [Pose(5.0, 5.0, 0.3)] * 10
    sample = rasterize(_scene(poses), 3, WIDE)
    assert sample.raster.shape == (WIDE.num_channels, 64, 64)
    for offset in range(1, WIDE.history_frames + 1):
        assert np.array_equal(sample.raster[0], sample.raster[offset])
    assert sample.raster[0, 32, 16] == 1.0
    assert not sample.raster[WIDE.history_frames + 1 :].any()
    assert np.array_equal(sample.target, np.zeros((4, 2)))
    assert sample.availability.all()


def test_agent_at_ego_position_marks_center_pixel():
    cfg = RasterConfig(size_px=32, history_frames=1, future_frames=2)
    poses = [Pose(1.0, 2.0, -0.4)] * 5
    agents = [[AgentState("a", (1.0, 2.0), -0.4, (4.5, 2.0))] for _ in poses]
    sample = rasterize(_scene(poses, agents), 1, cfg)
    agent_layer = sample.raster[cfg.history_frames + 1]
    assert agent_layer[16, 8] == 1.0


def test_tiny_agent_marks_its_centroid_pixel():
    cfg = RasterConfig(size_px=32, history_frames=0, future_frames=1)
    poses = [Pose(0.0, 0.0, 0.0)] * 2
    agents = [[AgentState("p", (2.1, 1.1), 0.0, (0.05, 0.05))] for _ in poses]
    sample = rasterize(_scene(poses, agents), 0, cfg)
    layer = sample.raster[1]
    # 2.1 m ahead -> column floor(4.2 + 8) = 12; 1.1 m to the left -> row floor(2.2 + 16) = 18
    assert layer.sum() == 1.0
    assert layer[18, 12] == 1.0


@pytest.mark.parametrize("yaw", [0.0, 1.0, -2.5, math.pi])
def test_constant_velocity_targets(yaw):
    poses = [Pose(10.0 * 0.1 * i * math.cos(yaw), 10.0 * 0.1 * i * math.sin(yaw), yaw) for i in range(12)]
    sample = rasterize(_scene(poses), 4, WIDE)
    expected = np.array([[(t + 1) * 1.0, 0.0] for t in range(WIDE.future_frames)])
    assert np.allclose(sample.target, expected, atol=1e-9)


def test_traffic_light_values():
    cfg = RasterConfig(size_px=32, history_frames=0, future_frames=1)
    poses = [Pose(0.0, 0.0, 0.0)] * 2
    lights = [
        [
            TrafficLight(10.0, 0.0, LightState.GREEN),
            TrafficLight(10.1, 0.1, LightState.RED),
            TrafficLight(5.0, -3.0, LightState.YELLOW),
        ]
        for _ in poses
    ]
    sample = rasterize(_scene(poses, lights=lights), 0, cfg)
    light_layer = sample.raster[2]
    assert light_layer[16, 28] == LIGHT_VALUES[LightState.RED] == 1.0
    assert light_layer[10, 18] == LIGHT_VALUES[LightState.YELLOW] == 0.5
    assert np.count_nonzero(light_layer) == 2


def test_rasterize_frame_window_errors():
    scene = _scene([Pose(0.0, 0.0, 0.0)] * 8)
    with pytest.raises(ValueError) as excinfo:
        rasterize(scene, 1, WIDE)
    assert "2 history frames" in str(excinfo.value)
    assert "at least 7 frames" in str(excinfo.value)
    with pytest.raises(ValueError):
        rasterize(scene, 4, WIDE)


def test_partial_future_marks_missing_steps_unavailable():
    poses = [Pose(float(i), 0.0, 0.0) for i in range(6)]
    sample = rasterize(_scene(poses), 3, WIDE, require_full_future=False)
    assert sample.availability.tolist() == [True, True, False, False]
    assert np.array_equal(sample.target[2:], np.zeros((2, 2)))
    assert sample.target[1].tolist() == [2.0, 0.0]


def test_masked_agents_never_contribute():
    scenes = generate_synthetic(seed=5, num_scenes=10, frames_per_scene=10, max_agents=6)
    everyone_out = generate_mask(scenes, seed=0, drop_fraction=1.0)
    agent_channels = slice(WIDE.history_frames + 1, 2 * WIDE.history_frames + 2)

    visible = 0
    for scene in scenes:
        for frame_index in range(WIDE.history_frames, len(scene.frames) - WIDE.future_frames):
            kept = rasterize(scene, frame_index, WIDE)
            dropped = rasterize(scene, frame_index, WIDE, everyone_out)
            visible += int(kept.raster[agent_channels].any())
            assert not dropped.raster[agent_channels].any()
            assert np.array_equal(kept.raster[: WIDE.history_frames + 1], dropped.raster[: WIDE.history_frames + 1])
    assert visible > 0


def test_partially_masked_scene_drops_only_flagged_track():
    poses = [Pose(0.0, 0.0, 0.0)] * 8
    agents = [
        [AgentState("keep", (8.0, 0.0), 0.0, (4.5, 2.0)), AgentState("drop", (0.0, -6.0), 0.0, (4.5, 2.0))]
        for _ in poses
    ]
    scene = _scene(poses, agents)
    mask = AgentsMask()
    mask.set(scene.id, "drop", False)
    layer = rasterize(scene, 2, WIDE, mask).raster[WIDE.history_frames + 1]
    # "keep" sits 8 m ahead -> column 32; "drop" would sit at row 32 - 12 = 20
    assert layer[32, 32] == 1.0
    assert not layer[15:25].any()


def _off_grid_scene():
    poses, agents, lights = [], [], []
    for i in range(10):
        poses.append(Pose(0.37 * i + 1.013, 0.11 * i - 2.207, 0.3 + 0.01 * i))
        agents.append(
            [
                AgentState("lead", (7.13 + 0.4 * i, 2.41), 0.2, (4.5, 2.0)),
                AgentState("walker", (-1.93, -5.17 + 0.05 * i), -1.1, (0.8, 0.8), AgentLabel.PEDESTRIAN),
            ]
        )
        lights.append([TrafficLight(14.71, 3.33, LightState.RED), TrafficLight(9.07, -4.49, LightState.GREEN)])
    return _scene(poses, agents, lights)


@pytest.mark.parametrize("shift", [(64.0, -32.0), (-150.5, 77.25)])
def test_translation_equivariance(shift):
    scene = _off_grid_scene()
    moved = _translate(scene, *shift)
    for frame_index in (2, 5):
        a = rasterize(scene, frame_index, WIDE)
        b = rasterize(moved, frame_index, WIDE)
        assert a.raster.any()
        assert np.array_equal(a.raster, b.raster)
        assert np.allclose(a.target, b.target, atol=1e-9)


@pytest.mark.parametrize("shift", [(64.0, -32.0), (-100.0, 250.0)])
@pytest.mark.parametrize("motion", list(Motion))
def test_translation_equivariance_on_generated_scenes(motion, shift):
    scenes = generate_synthetic(seed=21, num_scenes=3, frames_per_scene=10, motion=motion, max_agents=6, max_lights=2)
    for scene in scenes:
        moved = _translate(scene, *shift)
        for frame_index in range(WIDE.history_frames, len(scene.frames) - WIDE.future_frames):
            a = rasterize(scene, frame_index, WIDE)
            b = rasterize(moved, frame_index, WIDE)
            assert np.array_equal(a.raster, b.raster)
            assert np.allclose(a.target, b.target, atol=1e-9)


def test_rasterize_is_deterministic_and_bounded():
    (scene,) = generate_synthetic(seed=8, num_scenes=1, frames_per_scene=12, motion="lane_change", max_agents=6)
    a = rasterize(scene, 4, WIDE)
    b = rasterize(scene, 4, WIDE)
    assert np.array_equal(a.raster, b.raster)
    assert np.array_equal(a.target, b.target)
    assert a.raster.min() >= 0.0 and a.raster.max() <= 1.0
    assert a.sample_id == f"{scene.id}:4"


def test_scene_dataset_index_and_batches():
    scenes = generate_synthetic(seed=6, num_scenes=4, frames_per_scene=12)
    dataset = SceneDataset(scenes, WIDE, sample_stride=2)
    # frames 2, 4, 6 of each 12-frame scene (last usable frame is 7)
    assert len(dataset) == 4 * 3
    assert dataset.sample_ids([0, 1, 3]) == [f"{scenes[0].id}:2", f"{scenes[0].id}:4", f"{scenes[1].id}:2"]

    rasters, targets, availability = dataset.batch([5, 0, 7])
    assert rasters.shape == (3, WIDE.num_channels, 64, 64)
    assert targets.shape == (3, 4, 2)
    assert availability.all()
    assert np.array_equal(rasters[1], dataset[0].raster)

    threaded = SceneDataset(scenes, WIDE, sample_stride=2, workers=4).batch([5, 0, 7])
    for serial, parallel in zip((rasters, targets, availability), threaded):
        assert np.array_equal(serial, parallel)


def test_scene_dataset_skips_short_scenes():
    short = generate_synthetic(seed=6, num_scenes=2, frames_per_scene=WIDE.min_scene_frames - 1)
    assert len(SceneDataset(short, WIDE)) == 0
    exact = generate_synthetic(seed=6, num_scenes=2, frames_per_scene=WIDE.min_scene_frames)
    assert len(SceneDataset(exact, WIDE)) == 2
    with pytest.raises(ValueError):
        SceneDataset(exact, WIDE, sample_stride=0)
