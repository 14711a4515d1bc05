"""
Command-line entry point: trajkit <command> [flags].

Exit codes: 0 success, 2 I/O or data format error, 3 numerical abort,
4 scaling constraint or grid-search failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from . import __version__
from .config import RasterConfig, Settings, TrainConfig
from .errors import TrajkitError
from .main import TrajectoryPipeline
from .scaling import DEFAULT_GRID_STEP, DEFAULT_GRID_UPPER, DEFAULT_TOLERANCE, BaseArchitecture, HeadConfig, ScalingCoefficients
from .scenes import Motion

logger = logging.getLogger(__name__)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="Scene file")
    p.add_argument("--mask", type=Path, default=None, help="Agents mask file")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stage-layers", type=int, nargs="+", default=[2, 2, 2, 2])
    p.add_argument("--stage-channels", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--input-resolution", type=int, default=64, help="Base raster size in pixels")
    p.add_argument("--modes", type=int, default=3, help="Number of hypotheses K")
    p.add_argument("--history", type=int, default=4, help="History frames H")
    p.add_argument("--future", type=int, default=16, help="Future frames T")
    p.add_argument("--pixel-size", type=float, default=0.5, help="Meters per pixel")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--optimizer", choices=["radam", "sgd"], default="radam")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--sample-stride", type=int, default=5)
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--progress", action="store_true", help="Show a progress bar per epoch")
    p.add_argument("--out", type=Path, default=Path("run"), help="Directory for checkpoints and logs")


def _add_coeff_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--beta", type=float, default=1.1)
    p.add_argument("--gamma", type=float, default=1.15)
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajkit", description="Desk-scale trajectory prediction toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--json", action="store_true", help="Machine-readable output")
    parser.add_argument("--precision", choices=["float64", "float32"], default=None)
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--workers", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--motion", choices=[m.value for m in Motion], default=Motion.CONSTANT_VELOCITY.value)
    p.add_argument("--drop-fraction", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mask-out", type=Path, default=None)

    p = sub.add_parser("train", help="Train a scaled model")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_coeff_flags(p)
    p.add_argument("--variant", choices=["hybrid", "resnet", "efficientnet"], default="hybrid")
    p.add_argument("--search", action="store_true", help="Grid-search alpha, beta, gamma first")
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    _add_data_flags(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--sample-stride", type=int, default=None, help="Override the stride recorded in the checkpoint")
    p.add_argument("--out", type=Path, default=None, help="JSON file for the metrics")

    for name in ("predict", "plot"):
        p = sub.add_parser(name, help="Predict one sample" if name == "predict" else "Plot one prediction")
        _add_data_flags(p)
        p.add_argument("--ckpt", type=Path, required=True)
        p.add_argument("--scene", required=True)
        p.add_argument("--frame", type=int, required=True)
        p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("scale-search", help="Grid-search the scaling coefficients")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP)
    p.add_argument("--upper", type=float, default=DEFAULT_GRID_UPPER)
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--search-epochs", type=int, default=2)
    p.add_argument("--report", type=Path, default=None, help="CSV file for the per-point report")

    p = sub.add_parser("inspect", help="Summarize a corpus")
    _add_data_flags(p)

    p = sub.add_parser("compare", help="Train resnet, efficientnet and hybrid variants side by side")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_coeff_flags(p)
    return parser


def _raster(args: argparse.Namespace) -> RasterConfig:
    return RasterConfig(
        size_px=args.input_resolution,
        resolution=args.pixel_size,
        history_frames=args.history,
        future_frames=args.future,
    )


def _base(args: argparse.Namespace, raster: RasterConfig) -> BaseArchitecture:
    return BaseArchitecture(
        stage_layers=tuple(args.stage_layers),
        stage_channels=tuple(args.stage_channels),
        input_resolution=args.input_resolution,
        in_channels=raster.num_channels,
        head=HeadConfig(args.modes, args.future),
    )


def _train_config(args: argparse.Namespace, raster: RasterConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        optimizer=args.optimizer,
        eval_fraction=args.eval_fraction,
        sample_stride=args.sample_stride,
        log_every=args.log_every,
        progress=args.progress,
        data_path=args.data,
        mask_path=args.mask,
        checkpoint_dir=args.out / "checkpoints",
        log_dir=args.out / "logs",
        raster=raster,
    )


def _emit(args: argparse.Namespace, payload: Dict[str, Any], text: List[str]) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print("\n".join(text))


def _search(pipeline: TrajectoryPipeline, args: argparse.Namespace, epochs: int, upper: float = DEFAULT_GRID_UPPER):
    raster = _raster(args)
    cfg = _train_config(args, raster)
    report = getattr(args, "report", None)
    return pipeline.scale_search(cfg, _base(args, raster), args.grid_step, args.tol, epochs, report, upper)


def run(args: argparse.Namespace, pipeline: TrajectoryPipeline) -> int:
    if args.command == "gen":
        summary = pipeline.generate(args.out, args.seed, args.scenes, args.frames, args.motion, args.mask_out, args.drop_fraction)
        _emit(args, summary, [f"Generated {summary['scenes']} scenes -> {summary['scene_file']}"])

    elif args.command == "inspect":
        summary = pipeline.inspect(args.data, args.mask)
        _emit(args, summary, [f"{key}: {value}" for key, value in summary.items()])

    elif args.command == "train":
        raster = _raster(args)
        base = _base(args, raster)
        if args.search:
            best = _search(pipeline, args, epochs=2).best
            coeffs = ScalingCoefficients(best.alpha, best.beta, best.gamma, args.phi)
        else:
            coeffs = ScalingCoefficients(args.alpha, args.beta, args.gamma, args.phi)
        model, report = pipeline.train(_train_config(args, raster), base, coeffs, args.tol, args.variant)
        last = report.records[-1] if report.records else None
        payload = {
            "alpha": coeffs.alpha,
            "beta": coeffs.beta,
            "gamma": coeffs.gamma,
            "phi": coeffs.phi,
            "product": coeffs.product,
            "parameters": model.num_parameters(),
            "epochs": len(report.records),
            "checkpoint": str(report.checkpoint_path),
            "final_train_loss": last.train_loss if last else None,
            "final_eval_nll": last.eval_nll if last else None,
        }
        text = [f"Checkpoint: {report.checkpoint_path}", f"Parameters: {model.num_parameters()}"]
        if last:
            text.append(report.to_frame().to_string(index=False))
        _emit(args, payload, text)

    elif args.command == "eval":
        result = pipeline.evaluate(args.ckpt, args.data, args.mask, args.batch, args.sample_stride)
        payload = {"nll": result.nll, "ade": result.ade, "fde": result.fde, "samples": result.num_samples}
        if args.out is not None:
            payload["path"] = pipeline.write_metrics(result, args.out)
        _emit(args, payload, [f"nll={result.nll:.6f} ade={result.ade:.6f} fde={result.fde:.6f} samples={result.num_samples}"])

    elif args.command in ("predict", "plot"):
        sample, pred, raster = pipeline.predict(args.ckpt, args.data, args.scene, args.frame, args.mask)
        if args.command == "predict":
            path = pipeline.write_prediction(pred, args.out)
            payload = {"path": path, "confidences": pred.confidences().tolist()}
        else:
            path, record = pipeline.plot(sample, pred, raster, args.out)
            payload = {"path": path, "polylines": len(record.polylines), "vertices": record.vertex_count()}
        _emit(args, payload, [f"Wrote {path}"])

    elif args.command == "scale-search":
        result = _search(pipeline, args, args.search_epochs, args.upper)
        best = result.best
        payload = {
            "alpha": best.alpha,
            "beta": best.beta,
            "gamma": best.gamma,
            "product": best.product,
            "score": result.best_score,
            "grid_points": len(result.report),
        }
        _emit(
            args,
            payload,
            [f"best alpha={best.alpha} beta={best.beta} gamma={best.gamma} product={best.product:.6f} score={result.best_score:.6f}"],
        )

    elif args.command == "compare":
        raster = _raster(args)
        coeffs = ScalingCoefficients(args.alpha, args.beta, args.gamma, args.phi)
        table = pipeline.compare(_train_config(args, raster), _base(args, raster), coeffs, args.out / "compare")
        _emit(args, {"variants": table.to_dict(orient="records")}, [table.to_string(index=False)])
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = Settings.from_env()
        overrides = {
            key: value
            for key, value in (("precision", args.precision), ("log_level", args.log_level), ("workers", args.workers))
            if value is not None
        }
        settings = Settings.model_validate({**settings.model_dump(), **overrides})
    except (ValidationError, ValueError) as e:
        print(f"Invalid settings: {str(e)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=settings.log_level)

    try:
        return run(args, TrajectoryPipeline(settings))
    except TrajkitError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command} got an invalid configuration: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return 2
    except ValueError as e:
        logger.error(f"{args.command} got invalid input: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
