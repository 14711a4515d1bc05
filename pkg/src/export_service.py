"""
Export service for reports, prediction files and trajectory plots.
"""
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd
from fpdf import FPDF

from .config import RasterConfig
from .errors import SceneFormatError
from .losses import TrajectoryPrediction
from .raster import Sample

logger = logging.getLogger(__name__)

PREDICTION_HEADER = "trajkit-pred v1"

# Fixed so that identical inputs give byte-identical PDFs
PLOT_CREATION_DATE = datetime(2020, 1, 1, tzinfo=timezone.utc)

MODE_COLORS = [(214, 39, 40), (31, 119, 180), (44, 160, 44), (148, 103, 189), (255, 127, 14), (140, 86, 75)]


@dataclass
class PredictionFile:
    confidences: np.ndarray
    hypotheses: np.ndarray


@dataclass
class PlotRecord:
    """The polylines drawn on a plot, in raster pixel coordinates."""

    polylines: List[Tuple[str, List[Tuple[float, float]]]] = field(default_factory=list)

    def vertex_count(self, prefix: str = "mode") -> int:
        return sum(len(points) for label, points in self.polylines if label.startswith(prefix))


def write_prediction(path: Union[str, Path], confidences: np.ndarray, hypotheses: np.ndarray) -> Path:
    """Header line, then per mode one confidence line followed by T lines of "x y"."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(PREDICTION_HEADER + "\n")
        for confidence, trajectory in zip(confidences, hypotheses):
            f.write(f"{float(confidence)!r}\n")
            for x, y in trajectory:
                f.write(f"{float(x)!r} {float(y)!r}\n")
    return path


def read_prediction(path: Union[str, Path]) -> PredictionFile:
    path = Path(path)
    confidences: List[float] = []
    modes: List[List[Tuple[float, float]]] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != PREDICTION_HEADER:
            raise SceneFormatError(f"expected header '{PREDICTION_HEADER}', got '{header}'", line=1)
        for line_no, line in enumerate(f, start=2):
            fields = line.split()
            try:
                if len(fields) == 1:
                    confidences.append(float(fields[0]))
                    modes.append([])
                elif len(fields) == 2 and modes:
                    modes[-1].append((float(fields[0]), float(fields[1])))
                else:
                    raise ValueError(f"unexpected line '{line.rstrip()}'")
            except ValueError as e:
                raise SceneFormatError(str(e), line=line_no) from e
    if len({len(m) for m in modes}) > 1:
        raise SceneFormatError(f"modes of {path} have different lengths")
    if not modes:
        return PredictionFile(np.zeros(0), np.zeros((0, 0, 2)))
    hypotheses = np.array(modes, dtype=np.float64).reshape(len(modes), -1, 2)
    return PredictionFile(np.array(confidences, dtype=np.float64), hypotheses)


class ExportService:
    def __init__(self, output_dir: Union[str, Path] = "outputs"):
        """Initialize the export service with an output directory."""
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def to_csv(self, data: Union[pd.DataFrame, Dict[str, Any]], filename: str) -> str:
        """Export a table to CSV format."""
        df = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
        filepath = self.output_dir / f"{filename}.csv"
        df.to_csv(filepath, index=False, lineterminator="\n")
        return str(filepath)

    def to_json(self, data: Any, filename: str) -> str:
        """Export results to JSON format."""
        filepath = self.output_dir / f"{filename}.json"
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
        return str(filepath)

    def to_text_table(self, data: pd.DataFrame, filename: str) -> str:
        """Export a table as aligned plain text."""
        filepath = self.output_dir / f"{filename}.txt"
        with open(filepath, "w", encoding="utf-8") as f:
            f.write(data.to_string(index=False, float_format=lambda v: f"{v:.6f}") + "\n")
        return str(filepath)

    def to_prediction(self, pred: TrajectoryPrediction, filename: str) -> str:
        """Write one sample's prediction file; a name without a suffix gets .pred."""
        if pred.is_batched:
            raise ValueError("Prediction files hold a single sample")
        filepath = self.output_dir / (filename if Path(filename).suffix else f"{filename}.pred")
        write_prediction(filepath, pred.confidences(), pred.hypotheses.data)
        return str(filepath)

    def to_plot(
        self,
        sample: Sample,
        pred: TrajectoryPrediction,
        cfg: RasterConfig,
        filename: str,
    ) -> Tuple[str, PlotRecord]:
        """
        Draw the sample's ego and agent footprints, its ground-truth future and
        the K predicted trajectories as a single-page PDF.

        Args:
            sample: Rasterized sample
            pred: Unbatched prediction for the sample
            cfg: Raster geometry used to place metric trajectories on the raster
            filename: Output name without extension

        Returns:
            Path of the PDF and the record of polylines drawn
        """
        if pred.is_batched:
            raise ValueError("Plots show a single sample")
        size = cfg.size_px
        side = 160.0
        left, top = 25.0, 40.0
        cell = side / size

        def to_page(points: np.ndarray) -> List[Tuple[float, float]]:
            px = points[:, 0] / cfg.resolution + cfg.ego_center[0] * size
            py = points[:, 1] / cfg.resolution + cfg.ego_center[1] * size
            return [(float(x), float(y)) for x, y in zip(px, py)]

        pdf = FPDF(unit="mm", format="A4")
        pdf.set_compression(False)
        pdf.creation_date = PLOT_CREATION_DATE
        pdf.add_page()
        pdf.set_font("helvetica", size=12)
        pdf.text(left, top - 12, f"{sample.scene_id} frame {sample.frame_index}")

        pdf.set_draw_color(0, 0, 0)
        pdf.set_line_width(0.3)
        pdf.rect(left, top, side, side)

        history = cfg.history_frames
        layers = [(sample.raster[0], (160, 160, 160)), (sample.raster[history + 1], (250, 200, 120))]
        for layer, color in layers:
            pdf.set_fill_color(*color)
            for row, col in zip(*np.nonzero(layer)):
                pdf.rect(left + col * cell, top + row * cell, cell, cell, style="F")
        lights = sample.raster[2 * history + 2]
        for row, col in zip(*np.nonzero(lights)):
            shade = int(255 * (1.0 - lights[row, col]))
            pdf.set_fill_color(255, shade, 0)
            pdf.rect(left + col * cell, top + row * cell, cell, cell, style="F")

        record = PlotRecord()

        def draw(label: str, points: List[Tuple[float, float]], color: Tuple[int, int, int]) -> None:
            record.polylines.append((label, points))
            pdf.set_draw_color(*color)
            pdf.polyline([(left + x * cell, top + y * cell) for x, y in points])

        truth = to_page(sample.target[sample.availability])
        if truth:
            pdf.set_line_width(0.6)
            draw("ground_truth", truth, (0, 0, 0))

        confidences = pred.confidences()
        pdf.set_line_width(0.4)
        pdf.set_font("helvetica", size=9)
        for k, trajectory in enumerate(pred.hypotheses.data):
            color = MODE_COLORS[k % len(MODE_COLORS)]
            draw(f"mode_{k}", to_page(trajectory), color)
            pdf.set_text_color(*color)
            pdf.text(left, top + side + 8 + 5 * k, f"mode {k}: confidence {confidences[k]:.4f}")

        filepath = self.output_dir / f"{filename}.pdf"
        pdf.output(str(filepath))
        logger.info(f"Wrote plot {filepath} with {len(record.polylines)} polylines")
        return str(filepath), record
