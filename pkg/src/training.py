"""
Training orchestration: dataset split, the train/eval loop, checkpointing,
the validation-loss score used by the coefficient grid search, and the
model-variant comparison.
"""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .analysis_utils import epoch_permutation, format_duration, iter_batches
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .errors import NumericalAbort, ShapeError
from .losses import GroundTruth, batch_nll, displacement_errors, sample_nll
from .model import HybridModel, build
from .optim import make_optimizer
from .raster import SceneDataset
from .scaling import BaseArchitecture, ScalingCoefficients, ScoreFunction, flops_proxy
from .scenes import AgentsMask, Scene, read_mask, read_scenes
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

NAN_RECORD = "nan_batch.json"


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    eval_nll: float
    ade: float
    fde: float
    wall_time: float


@dataclass
class TrainReport:
    records: List[EpochRecord] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    checkpoints: List[Path] = field(default_factory=list)

    def to_frame(self, include_wall_time: bool = False) -> pd.DataFrame:
        columns = ["epoch", "steps", "train_loss", "eval_nll", "ade", "fde"]
        if include_wall_time:
            columns.append("wall_time")
        return pd.DataFrame([asdict(r) for r in self.records], columns=columns)


@dataclass(frozen=True)
class Evaluation:
    nll: float
    ade: float
    fde: float
    num_samples: int


def split(scenes: Sequence[Scene], eval_fraction: float, seed: int) -> Tuple[List[Scene], List[Scene]]:
    """Shuffle scenes by seed and cut off round(eval_fraction * n) of them (at least one each side)."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    scenes = list(scenes)
    if len(scenes) < 2:
        raise ValueError(f"Need at least 2 scenes to split, got {len(scenes)}")
    order = np.random.default_rng(seed).permutation(len(scenes))
    num_eval = min(max(int(math.floor(len(scenes) * eval_fraction + 0.5)), 1), len(scenes) - 1)
    eval_scenes = [scenes[i] for i in order[:num_eval]]
    train_scenes = [scenes[i] for i in order[num_eval:]]
    return train_scenes, eval_scenes


def evaluate_dataset(model: HybridModel, dataset: SceneDataset, batch_size: int = 16) -> Evaluation:
    """Mean per-sample NLL, ADE and FDE over every sample of the dataset, without recording gradients."""
    if len(dataset) == 0:
        raise ValueError("Evaluation needs at least one extractable sample")
    nll_sum = ade_sum = fde_sum = 0.0
    with no_grad():
        for batch in iter_batches(range(len(dataset)), batch_size):
            rasters, targets, availability = dataset.batch(batch)
            pred = model(Tensor(rasters))
            gt = GroundTruth(targets, availability)
            nll_sum += float(sample_nll(pred, gt).data.sum())
            ade_values, fde_values = displacement_errors(pred, gt)
            ade_sum += float(ade_values.sum())
            fde_sum += float(fde_values.sum())
    n = len(dataset)
    return Evaluation(nll_sum / n, ade_sum / n, fde_sum / n, n)


def evaluate(
    model: HybridModel,
    scenes: Sequence[Scene],
    cfg: TrainConfig,
    mask: Optional[AgentsMask] = None,
) -> Evaluation:
    dataset = SceneDataset(scenes, cfg.raster, mask, cfg.sample_stride, cfg.workers)
    return evaluate_dataset(model, dataset, cfg.batch_size)


def _check_model_matches(model: HybridModel, cfg: TrainConfig) -> None:
    raster = cfg.raster
    if raster.size_px != model.input_resolution:
        raise ShapeError(f"Raster size {raster.size_px} does not match model input resolution {model.input_resolution}")
    if raster.num_channels != model.arch.in_channels:
        raise ShapeError(f"Raster has {raster.num_channels} channels, model expects {model.arch.in_channels}")
    if raster.future_frames != model.future_frames:
        raise ShapeError(f"Raster horizon T={raster.future_frames} but model predicts T={model.future_frames}")


def _persist_nan(cfg: TrainConfig, epoch: int, batch_index: int, step: int, sample_ids: List[str]) -> Path:
    log_dir = Path(cfg.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    path = log_dir / NAN_RECORD
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {"epoch": epoch, "batch_index": batch_index, "step": step, "seed": cfg.seed, "sample_ids": sample_ids},
            f,
            indent=2,
        )
    return path


def load_training_data(cfg: TrainConfig) -> Tuple[List[Scene], Optional[AgentsMask]]:
    if cfg.data_path is None:
        raise ValueError("TrainConfig.data_path is not set and no scenes were given")
    scenes = read_scenes(cfg.data_path)
    mask = read_mask(cfg.mask_path) if cfg.mask_path is not None else None
    return scenes, mask


def train(
    cfg: TrainConfig,
    model: HybridModel,
    scenes: Optional[Sequence[Scene]] = None,
    mask: Optional[AgentsMask] = None,
    save_checkpoints: bool = True,
) -> TrainReport:
    """
    Train a model for cfg.epochs epochs.

    Each epoch visits the training samples in an order seeded from (seed, epoch),
    takes one optimizer step per batch, evaluates on the held-out scenes and
    writes a checkpoint. An initial checkpoint is written before the first epoch.

    Args:
        cfg: Training configuration
        model: Model to train in place
        scenes: Corpus; read from cfg.data_path when omitted
        mask: Agent usability flags; read from cfg.mask_path when scenes are omitted
        save_checkpoints: Write per-epoch checkpoints to cfg.checkpoint_dir

    Returns:
        TrainReport with one record per completed epoch
    """
    if scenes is None:
        scenes, mask = load_training_data(cfg)
    _check_model_matches(model, cfg)

    train_scenes, eval_scenes = split(scenes, cfg.eval_fraction, cfg.seed)
    train_set = SceneDataset(train_scenes, cfg.raster, mask, cfg.sample_stride, cfg.workers)
    eval_set = SceneDataset(eval_scenes, cfg.raster, mask, cfg.sample_stride, cfg.workers)
    if len(train_set) == 0:
        raise ValueError(
            f"No extractable training samples: scenes need at least {cfg.raster.min_scene_frames} frames"
        )
    logger.info(
        f"Training on {len(train_set)} samples from {len(train_scenes)} scenes, "
        f"evaluating on {len(eval_set)} samples from {len(eval_scenes)} scenes"
    )

    optimizer = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    report = TrainReport()
    checkpoint_dir = Path(cfg.checkpoint_dir)

    def _checkpoint(epoch: int) -> None:
        if not save_checkpoints:
            return
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        path = save_checkpoint(
            checkpoint_dir / f"epoch_{epoch:03d}.ckpt", model, optimizer, epoch, cfg.raster, cfg.sample_stride
        )
        report.checkpoints.append(path)
        report.checkpoint_path = path

    _checkpoint(0)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = epoch_permutation(len(train_set), cfg.seed, epoch)
        batches = list(iter_batches(order, cfg.batch_size))
        losses = []
        for batch_index, batch in enumerate(tqdm(batches, desc=f"epoch {epoch}", disable=not cfg.progress)):
            rasters, targets, availability = train_set.batch(batch)
            optimizer.zero_grad()
            loss = batch_nll(model(Tensor(rasters)), GroundTruth(targets, availability))
            value = loss.item()
            if not math.isfinite(value):
                path = _persist_nan(cfg, epoch, batch_index, step, train_set.sample_ids(batch))
                logger.error(f"epoch={epoch:03d} step={step:06d} loss={value} aborting")
                raise NumericalAbort(f"Non-finite loss at epoch {epoch}, batch {batch_index}", str(path))
            loss.backward()
            optimizer.step()
            step += 1
            losses.append(value)
            if step % cfg.log_every == 0:
                logger.info(f"epoch={epoch:03d} step={step:06d} loss={value:.6f}")

        if len(eval_set):
            metrics = evaluate_dataset(model, eval_set, cfg.batch_size)
        else:
            logger.warning("Eval split has no extractable samples; eval metrics are NaN")
            metrics = Evaluation(math.nan, math.nan, math.nan, 0)
        record = EpochRecord(
            epoch=epoch,
            steps=step,
            train_loss=float(np.mean(losses)),
            eval_nll=metrics.nll,
            ade=metrics.ade,
            fde=metrics.fde,
            wall_time=time.perf_counter() - started,
        )
        report.records.append(record)
        logger.info(
            f"epoch={epoch:03d} train_loss={record.train_loss:.6f} eval_nll={record.eval_nll:.6f} "
            f"ade={record.ade:.6f} fde={record.fde:.6f} wall={format_duration(record.wall_time)}"
        )
        _checkpoint(epoch)
    return report


def validation_loss_score(
    scenes: Sequence[Scene],
    cfg: TrainConfig,
    mask: Optional[AgentsMask] = None,
    epochs: int = 2,
    variant: str = "hybrid",
) -> ScoreFunction:
    """
    Score function for the grid search: negated eval NLL after a short training run.

    Each grid point trains a fresh model seeded from cfg.seed on rasters sized
    to that point's scaled resolution.
    """
    search_cfg = TrainConfig.model_validate({**cfg.model_dump(), "epochs": epochs, "progress": False})

    def score(base: BaseArchitecture, coeffs: ScalingCoefficients) -> float:
        model = build(base, coeffs, future_frames=cfg.raster.future_frames, seed=cfg.seed, variant=variant)
        raster = search_cfg.raster.model_copy(update={"size_px": model.input_resolution})
        run_cfg = search_cfg.model_copy(update={"raster": raster})
        report = train(run_cfg, model, scenes, mask, save_checkpoints=False)
        return -report.records[-1].eval_nll if report.records else -math.inf

    return score


def compare(
    cfg: TrainConfig,
    base: BaseArchitecture,
    coeffs: ScalingCoefficients,
    scenes: Sequence[Scene],
    mask: Optional[AgentsMask] = None,
    variants: Sequence[str] = ("resnet", "efficientnet", "hybrid"),
) -> pd.DataFrame:
    """Train each model variant on the same data and seed and tabulate the outcome."""
    rows = []
    for variant in variants:
        model = build(base, coeffs, future_frames=cfg.raster.future_frames, seed=cfg.seed, variant=variant)
        raster = cfg.raster.model_copy(update={"size_px": model.input_resolution})
        run_cfg = cfg.model_copy(
            update={"raster": raster, "checkpoint_dir": Path(cfg.checkpoint_dir) / variant}
        )
        report = train(run_cfg, model, scenes, mask)
        last = report.records[-1] if report.records else None
        rows.append(
            {
                "variant": variant,
                "parameters": model.num_parameters(),
                "flops_proxy": flops_proxy(model.arch),
                "input_resolution": model.input_resolution,
                "final_train_loss": last.train_loss if last else math.nan,
                "final_eval_nll": last.eval_nll if last else math.nan,
                "ade": last.ade if last else math.nan,
                "fde": last.fde if last else math.nan,
            }
        )
        logger.info(f"Variant {variant}: params={model.num_parameters()} eval_nll={rows[-1]['final_eval_nll']:.6f}")
    return pd.DataFrame(rows)
