"""
Checkpoint container.

Layout: the header line "trajkit-ckpt v1", one JSON metadata line, then one
record per named tensor: a text line "name ndim dim_0 ... dim_{ndim-1}"
followed by the 64-bit little-endian payload.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .config import RasterConfig
from .errors import SceneFormatError, ShapeError
from .model import HybridModel
from .optim import RAdam, SGD, make_optimizer
from .scaling import BaseArchitecture, HeadConfig, ScalingCoefficients
from .tensor import get_default_dtype

logger = logging.getLogger(__name__)

CHECKPOINT_HEADER = b"trajkit-ckpt v1"

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    metadata: Dict[str, Any]
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        return int(self.metadata.get("epoch", 0))

    @property
    def arch(self) -> BaseArchitecture:
        a = self.metadata["arch"]
        return BaseArchitecture(
            stage_layers=tuple(a["stage_layers"]),
            stage_channels=tuple(a["stage_channels"]),
            input_resolution=a["input_resolution"],
            in_channels=a["in_channels"],
            head=HeadConfig(a["num_modes"], a["future_frames"]),
        )

    @property
    def coeffs(self) -> Optional[ScalingCoefficients]:
        c = self.metadata.get("coeffs")
        return ScalingCoefficients(**c) if c else None

    @property
    def raster(self) -> Optional[RasterConfig]:
        """Raster geometry the model was trained on, when recorded."""
        r = self.metadata.get("raster")
        return RasterConfig(**r) if r else None

    @property
    def sample_stride(self) -> Optional[int]:
        stride = self.metadata.get("sample_stride")
        return int(stride) if stride is not None else None


def _encode_record(name: str, array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f8")
    dims = " ".join(str(d) for d in array.shape)
    line = f"{name} {array.ndim} {dims}".rstrip() + "\n"
    return line.encode("utf-8") + array.tobytes()


def save_checkpoint(
    path: PathLike,
    model: HybridModel,
    optimizer: Optional[Union[RAdam, SGD]] = None,
    epoch: int = 0,
    raster: Optional[RasterConfig] = None,
    sample_stride: Optional[int] = None,
) -> Path:
    path = Path(path)
    names = []
    records = []
    for name, param in model.named_parameters():
        names.append(name)
        records.append(_encode_record(name, param.data))

    optimizer_meta = None
    if optimizer is not None:
        state = optimizer.state_dict()
        optimizer_meta = {k: v for k, v in state.items() if k not in ("m", "v")}
        for i, (m, v) in enumerate(zip(state["m"], state["v"])):
            records.append(_encode_record(f"optim.m.{i}", m))
            records.append(_encode_record(f"optim.v.{i}", v))

    arch = model.arch
    metadata = {
        "variant": model.variant,
        "block": model.block,
        "seed": model.seed,
        "epoch": epoch,
        "arch": {
            "stage_layers": list(arch.stage_layers),
            "stage_channels": list(arch.stage_channels),
            "input_resolution": arch.input_resolution,
            "in_channels": arch.in_channels,
            "num_modes": arch.head.num_modes,
            "future_frames": arch.head.future_frames,
        },
        "coeffs": None
        if model.coeffs is None
        else {"alpha": model.coeffs.alpha, "beta": model.coeffs.beta, "gamma": model.coeffs.gamma, "phi": model.coeffs.phi},
        "optimizer": optimizer_meta,
        "parameters": names,
        "raster": raster.model_dump(mode="json") if raster is not None else None,
        "sample_stride": sample_stride,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_HEADER + b"\n")
        f.write(json.dumps(metadata, sort_keys=True).encode("utf-8") + b"\n")
        for record in records:
            f.write(record)
    logger.debug(f"Saved checkpoint {path} (epoch {epoch}, {len(records)} tensors)")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        blob = f.read()

    def next_line(pos: int, line_no: int):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise SceneFormatError(f"truncated checkpoint {path}", line=line_no)
        return blob[pos:end].decode("utf-8"), end + 1

    header, pos = next_line(0, 1)
    if header.encode("utf-8") != CHECKPOINT_HEADER:
        raise SceneFormatError(f"expected header '{CHECKPOINT_HEADER.decode()}', got '{header}'", line=1)
    meta_line, pos = next_line(pos, 2)
    try:
        metadata = json.loads(meta_line)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"malformed checkpoint metadata: {str(e)}", line=2) from e

    tensors: Dict[str, np.ndarray] = {}
    record = 0
    while pos < len(blob):
        record += 1
        line, pos = next_line(pos, 2 + record)
        fields = line.split(" ")
        try:
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2 : 2 + ndim])
        except (IndexError, ValueError) as e:
            raise SceneFormatError(f"malformed tensor record '{line}'", line=2 + record) from e
        if len(shape) != ndim:
            raise SceneFormatError(f"tensor record '{line}' declares {ndim} dims", line=2 + record)
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise SceneFormatError(f"tensor {name} payload is truncated", line=2 + record)
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    return Checkpoint(metadata, tensors)


def restore_model(ckpt: Checkpoint) -> HybridModel:
    """Rebuild the model recorded in a checkpoint and load its parameters."""
    model = HybridModel(ckpt.arch, block=ckpt.metadata.get("block", "residual"))
    model.variant = ckpt.metadata.get("variant", model.variant)
    model.coeffs = ckpt.coeffs
    model.seed = ckpt.metadata.get("seed")
    dtype = get_default_dtype()
    for name, param in model.named_parameters():
        if name not in ckpt.tensors:
            raise ShapeError(f"Checkpoint has no tensor for parameter {name}")
        stored = ckpt.tensors[name]
        if stored.shape != param.shape:
            raise ShapeError(f"Parameter {name} has shape {param.shape}, checkpoint holds {stored.shape}")
        param.data = stored.astype(dtype)
    return model


def restore_optimizer(ckpt: Checkpoint, model: HybridModel) -> Optional[Union[RAdam, SGD]]:
    meta = ckpt.metadata.get("optimizer")
    if not meta:
        return None
    params = model.parameters()
    optimizer = make_optimizer(
        meta["name"],
        params,
        meta["lr"],
        meta.get("beta1", 0.9),
        meta.get("beta2", 0.999),
        meta.get("eps", 1e-8),
    )
    state = dict(meta)
    count = len(params) if meta["name"] == "radam" else 0
    state["m"] = [ckpt.tensors[f"optim.m.{i}"] for i in range(count)]
    state["v"] = [ckpt.tensors[f"optim.v.{i}"] for i in range(count)]
    optimizer.load_state_dict(state)
    return optimizer
