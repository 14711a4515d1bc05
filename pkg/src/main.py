"""
Main interface for the trajectory toolkit.
Provides high-level functions for data generation, training and prediction.
"""
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, TypeVar

import pandas as pd

from .checkpoint import Checkpoint, load_checkpoint, restore_model
from .config import RasterConfig, Settings, TrainConfig
from .errors import DataIOError
from .export_service import ExportService
from .losses import TrajectoryPrediction
from .model import HybridModel, build
from .raster import Sample, rasterize
from .scaling import (
    DEFAULT_GRID_UPPER,
    DEFAULT_TOLERANCE,
    BaseArchitecture,
    GridSearchResult,
    HeadConfig,
    ScalingCoefficients,
    run_grid_search,
)
from .scenes import AgentsMask, Motion, Scene, generate_mask, generate_synthetic, read_mask, read_scenes, write_mask, write_scenes
from .tensor import Tensor, no_grad, set_default_dtype
from .training import Evaluation, TrainReport, compare, evaluate, train, validation_loss_score

logger = logging.getLogger(__name__)

T = TypeVar("T")


def _io(action: str, fn: Callable[[], T]) -> T:
    try:
        return fn()
    except OSError as e:
        raise DataIOError(f"Error {action}: {str(e)}") from e


def default_base(raster: RasterConfig, num_modes: int = 3) -> BaseArchitecture:
    """The default four-stage base, sized to a raster configuration."""
    return BaseArchitecture(
        stage_layers=(2, 2, 2, 2),
        stage_channels=(16, 32, 64, 128),
        input_resolution=64,
        in_channels=raster.num_channels,
        head=HeadConfig(num_modes, raster.future_frames),
    )


class TrajectoryPipeline:
    def __init__(self, settings: Optional[Settings] = None):
        """Initialize the pipeline from process settings."""
        self.settings = settings if settings is not None else Settings.from_env()
        set_default_dtype(self.settings.precision)
        self._cache: Dict[str, Any] = {}

    def exporter(self, output_dir: Optional[Path] = None) -> ExportService:
        target = Path(output_dir) if output_dir is not None else self.settings.output_dir
        return _io(f"creating output directory {target}", lambda: ExportService(target))

    def load_scenes(self, path: Path) -> list:
        key = f"scenes:{Path(path).resolve()}"
        if key not in self._cache:
            self._cache[key] = _io(f"reading scenes from {path}", lambda: read_scenes(path))
        return self._cache[key]

    def load_mask(self, path: Optional[Path]) -> Optional[AgentsMask]:
        if path is None:
            return None
        return _io(f"reading agents mask from {path}", lambda: read_mask(path))

    def generate(
        self,
        out: Path,
        seed: int = 0,
        num_scenes: int = 100,
        frames: int = 50,
        motion: str = Motion.CONSTANT_VELOCITY.value,
        mask_out: Optional[Path] = None,
        drop_fraction: float = 0.1,
    ) -> Dict[str, Any]:
        """Generate a synthetic corpus and its agents mask."""
        scenes = generate_synthetic(seed, num_scenes, frames, motion)
        mask = generate_mask(scenes, seed, drop_fraction)
        mask_out = Path(mask_out) if mask_out is not None else Path(out).with_suffix(".mask")
        _io(f"writing scenes to {out}", lambda: write_scenes(scenes, out))
        _io(f"writing agents mask to {mask_out}", lambda: write_mask(mask, mask_out))
        return {"scenes": len(scenes), "frames_per_scene": frames, "scene_file": str(out), "mask_file": str(mask_out)}

    def inspect(self, data: Path, mask_path: Optional[Path] = None) -> Dict[str, Any]:
        scenes = self.load_scenes(data)
        mask = self.load_mask(mask_path)
        frames = [len(s.frames) for s in scenes]
        agents = {(s.id, a.track_id) for s in scenes for f in s.frames for a in f.agents}
        summary = {
            "scenes": len(scenes),
            "frames": int(sum(frames)),
            "min_frames": int(min(frames)) if frames else 0,
            "max_frames": int(max(frames)) if frames else 0,
            "agents": len(agents),
        }
        if mask is not None:
            summary["masked_out"] = sum(1 for usable in mask.flags.values() if not usable)
        return summary

    def train(
        self,
        cfg: TrainConfig,
        base: BaseArchitecture,
        coeffs: ScalingCoefficients,
        tol: float = DEFAULT_TOLERANCE,
        variant: str = "hybrid",
    ) -> Tuple[HybridModel, TrainReport]:
        """Build a scaled model, train it and write the report next to the logs."""
        scenes = self.load_scenes(cfg.data_path)
        mask = self.load_mask(cfg.mask_path)
        model = build(base, coeffs, future_frames=cfg.raster.future_frames, seed=cfg.seed, tol=tol, variant=variant)
        raster = cfg.raster.model_copy(update={"size_px": model.input_resolution})
        cfg = cfg.model_copy(update={"raster": raster, "workers": max(cfg.workers, self.settings.workers)})
        report = _io("training", lambda: train(cfg, model, scenes, mask))
        exporter = self.exporter(cfg.log_dir)
        frame = report.to_frame()
        _io("writing train report", lambda: exporter.to_csv(frame, "train_report"))
        _io("writing train report", lambda: exporter.to_text_table(report.to_frame(include_wall_time=True), "train_report"))
        return model, report

    def load_model(self, ckpt_path: Path) -> Tuple[HybridModel, Checkpoint]:
        ckpt = _io(f"reading checkpoint {ckpt_path}", lambda: load_checkpoint(ckpt_path))
        return restore_model(ckpt), ckpt

    def _raster_for(self, model: HybridModel, ckpt: Checkpoint) -> RasterConfig:
        if ckpt.raster is not None:
            return ckpt.raster
        # checkpoints without recorded geometry get the default pixel size
        return RasterConfig(
            size_px=model.input_resolution,
            history_frames=(model.arch.in_channels - 3) // 2,
            future_frames=model.future_frames,
        )

    def evaluate(
        self,
        ckpt_path: Path,
        data: Path,
        mask_path: Optional[Path] = None,
        batch_size: int = 16,
        sample_stride: Optional[int] = None,
    ) -> Evaluation:
        """Score a checkpoint on a corpus with the raster geometry and stride it was trained with."""
        model, ckpt = self.load_model(ckpt_path)
        stride = sample_stride if sample_stride is not None else ckpt.sample_stride
        options = {} if stride is None else {"sample_stride": stride}
        cfg = TrainConfig(batch_size=batch_size, raster=self._raster_for(model, ckpt), workers=self.settings.workers, **options)
        return evaluate(model, self.load_scenes(data), cfg, self.load_mask(mask_path))

    def _find_scene(self, data: Path, scene_id: str) -> Scene:
        for scene in self.load_scenes(data):
            if scene.id == scene_id:
                return scene
        raise DataIOError(f"Scene {scene_id} not found in {data}")

    def predict(
        self,
        ckpt_path: Path,
        data: Path,
        scene_id: str,
        frame: int,
        mask_path: Optional[Path] = None,
    ) -> Tuple[Sample, TrajectoryPrediction, RasterConfig]:
        model, ckpt = self.load_model(ckpt_path)
        cfg = self._raster_for(model, ckpt)
        scene = self._find_scene(data, scene_id)
        try:
            sample = rasterize(scene, frame, cfg, self.load_mask(mask_path), require_full_future=False)
        except ValueError as e:
            raise DataIOError(f"Frame {frame} of scene {scene_id} cannot be extracted: {str(e)}") from e
        with no_grad():
            pred = model(Tensor(sample.raster))
        return sample, pred, cfg

    def write_prediction(self, pred: TrajectoryPrediction, out: Path) -> str:
        out = Path(out)
        exporter = self.exporter(out.parent)
        return _io(f"writing prediction to {out}", lambda: exporter.to_prediction(pred, out.name))

    def write_metrics(self, result: Evaluation, out: Path) -> str:
        out = Path(out)
        exporter = self.exporter(out.parent)
        return _io(f"writing metrics to {out}", lambda: exporter.to_json(asdict(result), out.stem))

    def plot(self, sample: Sample, pred: TrajectoryPrediction, cfg: RasterConfig, out: Path):
        out = Path(out)
        exporter = self.exporter(out.parent)
        return _io(f"writing plot to {out}", lambda: exporter.to_plot(sample, pred, cfg, out.stem))

    def scale_search(
        self,
        cfg: TrainConfig,
        base: BaseArchitecture,
        grid_step: float = 0.05,
        tol: float = DEFAULT_TOLERANCE,
        epochs: int = 2,
        out: Optional[Path] = None,
        upper: float = DEFAULT_GRID_UPPER,
    ) -> GridSearchResult:
        """Grid-search (alpha, beta, gamma) with a short-training validation score."""
        scenes = self.load_scenes(cfg.data_path)
        score = validation_loss_score(scenes, cfg, self.load_mask(cfg.mask_path), epochs)
        result = run_grid_search(base, score, grid_step, tol, upper, self.settings.workers)
        if out is not None:
            out = Path(out)
            exporter = self.exporter(out.parent)
            _io(f"writing grid report to {out}", lambda: exporter.to_csv(result.report, out.stem))
        return result

    def compare(
        self,
        cfg: TrainConfig,
        base: BaseArchitecture,
        coeffs: ScalingCoefficients,
        out: Optional[Path] = None,
    ) -> pd.DataFrame:
        scenes = self.load_scenes(cfg.data_path)
        table = _io("comparing variants", lambda: compare(cfg, base, coeffs, scenes, self.load_mask(cfg.mask_path)))
        if out is not None:
            out = Path(out)
            exporter = self.exporter(out.parent)
            _io(f"writing comparison to {out}", lambda: exporter.to_csv(table, out.stem))
            _io(f"writing comparison to {out}", lambda: exporter.to_text_table(table, out.stem))
        return table

