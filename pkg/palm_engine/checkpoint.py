"""Versioned binary checkpoints.

Layout::

    b"PALMCKPT\\x01"            magic, format version in the last byte
    <Q header length>           little-endian uint64
    header                      UTF-8 JSON: configs, vocabulary, epoch,
                                tensor table, optimizer metadata
    payload                     row-major little-endian tensors

Every tensor entry carries its name, shape, dtype and byte offset into the
payload. Parameters use the run precision (``<f4`` or ``<f8``).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

from .config import RunConfig
from .corpus import Vocabulary
from .errors import CheckpointError, ConfigError, CorpusError, VocabularyMismatchError
from .lm import LanguageModel, ModelConfig
from .utils import resolve_dtype

logger = logging.getLogger(__name__)

MAGIC = b"PALMCKPT\x01"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")

_NUMPY_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.bool: "|b1",
}


@dataclass
class Checkpoint:
    run_config: RunConfig
    model_config: ModelConfig
    vocab: Vocabulary
    epoch: int
    tensors: Dict[str, np.ndarray]
    optimizer: Optional[Dict[str, Any]] = None
    payload_dtype: str = "<f4"


class _PayloadWriter:
    def __init__(self) -> None:
        self.chunks: List[bytes] = []
        self.offset = 0

    def add(self, name: str, tensor: torch.Tensor, float_dtype: str) -> Dict[str, Any]:
        value = tensor.detach().cpu()
        if value.is_floating_point():
            dtype = float_dtype
        else:
            dtype = _NUMPY_DTYPES.get(value.dtype)
            if dtype is None:
                raise CheckpointError(f"cannot store tensor {name!r} of dtype {value.dtype}")
        array = np.ascontiguousarray(value.numpy().astype(np.dtype(dtype)))
        raw = array.tobytes(order="C")
        entry = {"name": name, "shape": list(array.shape), "dtype": dtype, "offset": self.offset}
        self.chunks.append(raw)
        self.offset += len(raw)
        return entry


def _scalar(value: Any) -> Any:
    if isinstance(value, torch.Tensor):
        return {"tensor": value.item()}
    if isinstance(value, float) and not math.isfinite(value):
        return {"float": repr(value)}
    if isinstance(value, tuple):
        return list(value)
    return value


def _unscalar(value: Any) -> Any:
    if isinstance(value, dict) and "tensor" in value:
        return torch.tensor(value["tensor"])
    if isinstance(value, dict) and "float" in value:
        return float(value["float"])
    return value


def _split_optimizer(
    state: Dict[str, Any], writer: _PayloadWriter, float_dtype: str
) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Move optimizer tensors into the payload, keep scalars in the header."""

    inner = state["optimizer"]
    entries: List[Dict[str, Any]] = []
    per_param: Dict[str, Dict[str, Any]] = {}
    for index, slots in inner["state"].items():
        scalars: Dict[str, Any] = {}
        for key, value in slots.items():
            if isinstance(value, torch.Tensor) and value.dim() > 0:
                entries.append(writer.add(f"optimizer/{index}/{key}", value, float_dtype))
            else:
                scalars[key] = _scalar(value)
        per_param[str(index)] = scalars
    meta = {
        "kind": state["kind"],
        "param_groups": [
            {key: _scalar(value) for key, value in group.items()} for group in inner["param_groups"]
        ],
        "scalars": per_param,
        "switched_epoch": state.get("switched_epoch"),
        "best_valid": _scalar(state.get("best_valid", math.inf)),
        "stale": state.get("stale", 0),
    }
    return meta, entries


def save_checkpoint(
    path: str | Path,
    model: LanguageModel,
    *,
    config: RunConfig,
    vocab: Vocabulary,
    epoch: int,
    optimizer_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``model`` (and optionally an :class:`OptimizerSchedule` state) to ``path``."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    float_dtype = _NUMPY_DTYPES[resolve_dtype(config.precision)]
    writer = _PayloadWriter()
    tensors = [writer.add(name, value, float_dtype) for name, value in model.state_dict().items()]
    optimizer_meta = None
    if optimizer_state is not None:
        optimizer_meta, optimizer_entries = _split_optimizer(optimizer_state, writer, float_dtype)
        tensors.extend(optimizer_entries)

    header = {
        "format_version": FORMAT_VERSION,
        "run_config": config.to_dict(),
        "model_config": model.config.to_dict(),
        "vocab": list(vocab.itos),
        "epoch": epoch,
        "payload_dtype": float_dtype,
        "payload_bytes": writer.offset,
        "tensors": tensors,
        "optimizer": optimizer_meta,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with target.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_LENGTH.pack(len(encoded)))
        handle.write(encoded)
        for chunk in writer.chunks:
            handle.write(chunk)
    logger.debug("saved checkpoint %s (%d payload bytes)", target, writer.offset)
    return target


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) or not blob.startswith(MAGIC[:-1]):
        raise CheckpointError(f"{path} is not a palm checkpoint (bad magic)")
    if blob[len(MAGIC) - 1] != MAGIC[-1]:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format version {blob[len(MAGIC) - 1]}"
        )
    start = len(MAGIC) + _LENGTH.size
    if len(blob) < start:
        raise CheckpointError(f"{path}: truncated header")
    (header_len,) = _LENGTH.unpack_from(blob, len(MAGIC))
    if len(blob) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc

    payload = memoryview(blob)[start + header_len :]
    if len(payload) < int(header.get("payload_bytes", 0)):
        raise CheckpointError(
            f"{path}: truncated payload ({len(payload)} of {header['payload_bytes']} bytes)"
        )
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * dtype.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} runs past the payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
            .reshape(entry["shape"])
            .copy()
        )

    try:
        run_config = RunConfig(**header["run_config"])
        model_config = ModelConfig.from_dict(header["model_config"])
        vocab = Vocabulary(tuple(header["vocab"]))
    except (TypeError, ValueError, KeyError, ConfigError, CorpusError) as exc:
        raise CheckpointError(f"{path}: inconsistent header: {exc}") from exc
    return Checkpoint(
        run_config=run_config,
        model_config=model_config,
        vocab=vocab,
        epoch=int(header["epoch"]),
        tensors=arrays,
        optimizer=header.get("optimizer"),
        payload_dtype=header["payload_dtype"],
    )


def restore_model(checkpoint: Checkpoint) -> LanguageModel:
    """Rebuild the saved model in the run precision, in evaluation mode."""

    model = LanguageModel(checkpoint.model_config).to(resolve_dtype(checkpoint.run_config.precision))
    state = {
        name: torch.from_numpy(array)
        for name, array in checkpoint.tensors.items()
        if not name.startswith("optimizer/")
    }
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint tensors do not fit the model: {exc}") from exc
    model.eval()
    return model


def optimizer_state(checkpoint: Checkpoint) -> Optional[Dict[str, Any]]:
    """Rebuild the dict :meth:`OptimizerSchedule.load_state_dict` expects."""

    meta = checkpoint.optimizer
    if meta is None:
        return None
    state: Dict[int, Dict[str, Any]] = {
        int(index): {key: _unscalar(value) for key, value in scalars.items()}
        for index, scalars in meta["scalars"].items()
    }
    for name, array in checkpoint.tensors.items():
        if not name.startswith("optimizer/"):
            continue
        _, index, key = name.split("/", 2)
        state.setdefault(int(index), {})[key] = torch.from_numpy(array)
    groups = [{key: _unscalar(value) for key, value in group.items()} for group in meta["param_groups"]]
    return {
        "kind": meta["kind"],
        "optimizer": {"state": state, "param_groups": groups},
        "switched_epoch": meta.get("switched_epoch"),
        "best_valid": _unscalar(meta.get("best_valid")),
        "stale": meta.get("stale", 0),
    }


def ensure_vocabulary(checkpoint: Checkpoint, vocab: Vocabulary) -> None:
    if checkpoint.vocab.itos == vocab.itos:
        return
    size = len(checkpoint.vocab)
    mismatch = next(
        (
            index
            for index, (left, right) in enumerate(zip(checkpoint.vocab.itos, vocab.itos))
            if left != right
        ),
        min(size, len(vocab)),
    )
    raise VocabularyMismatchError(
        f"vocabulary differs from the checkpoint's at id {mismatch} "
        f"({size} vs {len(vocab)} entries)"
    )


__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_model",
    "optimizer_state",
    "ensure_vocabulary",
]
