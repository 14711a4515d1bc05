"""
Multimodal trajectory negative log-likelihood and displacement metrics.

For K hypotheses with confidences c = softmax(logits) the loss of one sample is

    -log sum_k exp(log c_k - 0.5 * sum_t [(dx_t^k)^2 + (dy_t^k)^2])

over available timesteps t, computed with a max-shifted logsumexp.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, log_softmax, logsumexp, stack

logger = logging.getLogger(__name__)


@dataclass
class TrajectoryPrediction:
    """
    K hypotheses of T future positions and K confidence logits.

    Either a single sample (hypotheses K×T×2, logits K) or a batch
    (hypotheses N×K×T×2, logits N×K).
    """

    hypotheses: Tensor
    confidence_logits: Tensor

    def __post_init__(self):
        if not isinstance(self.hypotheses, Tensor):
            self.hypotheses = Tensor(self.hypotheses)
        if not isinstance(self.confidence_logits, Tensor):
            self.confidence_logits = Tensor(self.confidence_logits)
        h, c = self.hypotheses.shape, self.confidence_logits.shape
        if len(h) not in (3, 4) or h[-1] != 2 or len(c) != len(h) - 2:
            raise ShapeError(f"Expected hypotheses (...,K,T,2) and logits (...,K), got {h} and {c}")
        if h[:-2] != c:
            raise ShapeError(f"Hypotheses {h} and logits {c} disagree on K or batch size")
        if h[-3] < 1 or h[-2] < 1:
            raise ShapeError(f"Need K >= 1 and T >= 1, got hypotheses shape {h}")

    @property
    def is_batched(self) -> bool:
        return self.hypotheses.ndim == 4

    @property
    def num_modes(self) -> int:
        return self.hypotheses.shape[-3]

    @property
    def future_frames(self) -> int:
        return self.hypotheses.shape[-2]

    def confidences(self) -> np.ndarray:
        logits = self.confidence_logits.data
        shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return shifted / shifted.sum(axis=-1, keepdims=True)


@dataclass
class GroundTruth:
    """Observed future positions (T×2 or N×T×2) with per-step availability."""

    positions: np.ndarray
    availability: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.availability = np.asarray(self.availability, dtype=bool)
        if self.positions.shape[:-1] != self.availability.shape or self.positions.shape[-1] != 2:
            raise ShapeError(
                f"Positions {self.positions.shape} and availability {self.availability.shape} do not match"
            )


def _batched(pred: TrajectoryPrediction, gt: GroundTruth) -> Tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    hyp, logits = pred.hypotheses, pred.confidence_logits
    positions, availability = gt.positions, gt.availability
    if not pred.is_batched:
        hyp = hyp.reshape(1, *hyp.shape)
        logits = logits.reshape(1, *logits.shape)
    if positions.ndim == 2:
        positions, availability = positions[None], availability[None]
    if hyp.shape[0] != positions.shape[0]:
        raise ShapeError(f"Prediction batch {hyp.shape[0]} does not match ground-truth batch {positions.shape[0]}")
    if hyp.shape[2] != positions.shape[1]:
        raise ShapeError(f"Prediction has T={hyp.shape[2]} but ground truth has T={positions.shape[1]}")
    if not availability.any(axis=1).all():
        raise ValueError("Ground truth with no available timestep cannot be scored; filter it upstream")
    return hyp, logits, positions, availability


def sample_nll(pred: TrajectoryPrediction, gt: GroundTruth) -> Tensor:
    """Per-sample loss as an N-vector."""
    hyp, logits, positions, availability = _batched(pred, gt)
    keep = availability[:, None, :, None].astype(hyp.data.dtype)
    targets = np.where(availability[..., None], positions, 0.0)[:, None].astype(hyp.data.dtype)
    diff = (hyp - Tensor(targets)) * Tensor(keep)
    sse = (diff * diff).sum(axis=(2, 3))
    return -logsumexp(log_softmax(logits, axis=-1) - sse * 0.5, axis=-1)


def nll_loss(pred: TrajectoryPrediction, gt: GroundTruth) -> Tensor:
    """Scalar loss of one sample."""
    return sample_nll(pred, gt).sum()


def batch_nll(
    preds: Union[TrajectoryPrediction, Sequence[TrajectoryPrediction]],
    gts: Union[GroundTruth, Sequence[GroundTruth]],
) -> Tensor:
    """Mean per-sample loss over a batch (a batched prediction or a list of single ones)."""
    if not isinstance(preds, TrajectoryPrediction):
        preds, gts = list(preds), list(gts)
        if not preds:
            raise ValueError("batch_nll needs a non-empty batch")
        if len(preds) != len(gts):
            raise ShapeError(f"Got {len(preds)} predictions but {len(gts)} ground truths")
        preds = TrajectoryPrediction(
            stack([p.hypotheses for p in preds]),
            stack([p.confidence_logits for p in preds]),
        )
        gts = GroundTruth(np.stack([g.positions for g in gts]), np.stack([g.availability for g in gts]))
    if preds.is_batched and preds.hypotheses.shape[0] == 0:
        raise ValueError("batch_nll needs a non-empty batch")
    return sample_nll(preds, gts).mean()


def displacement_errors(
    pred: TrajectoryPrediction,
    gt: GroundTruth,
    mode: str = "confident",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-sample average and final displacement errors.

    mode="confident" scores the highest-confidence hypothesis; mode="best" takes
    the minimum over hypotheses.
    """
    if mode not in ("confident", "best"):
        raise ValueError(f"Unknown displacement mode: {mode}")
    hyp, logits, positions, availability = _batched(pred, gt)
    dist = np.linalg.norm(hyp.data - positions[:, None], axis=-1)  # N×K×T
    counts = availability.sum(axis=1)
    per_mode_ade = np.where(availability[:, None], dist, 0.0).sum(axis=2) / counts[:, None]
    last = availability.shape[1] - 1 - np.argmax(availability[:, ::-1], axis=1)
    per_mode_fde = np.take_along_axis(dist, last[:, None, None], axis=2)[..., 0]
    if mode == "best":
        return per_mode_ade.min(axis=1), per_mode_fde.min(axis=1)
    top = np.argmax(logits.data, axis=1)[:, None]
    return np.take_along_axis(per_mode_ade, top, axis=1)[:, 0], np.take_along_axis(per_mode_fde, top, axis=1)[:, 0]


def ade(pred: TrajectoryPrediction, gt: GroundTruth, mode: str = "confident") -> float:
    return float(displacement_errors(pred, gt, mode)[0].mean())


def fde(pred: TrajectoryPrediction, gt: GroundTruth, mode: str = "confident") -> float:
    return float(displacement_errors(pred, gt, mode)[1].mean())
