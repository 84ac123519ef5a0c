"""
Binary checkpoint files.

Layout (little-endian):
    b"VCPCFG1"  u32 version  u32 record count
    per record: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32 values
    u32 metadata length, UTF-8 JSON metadata
Optimiser moments are ordinary records under the ``__adam_m__.`` and
``__adam_v__.`` prefixes; the step counter is a rank-0 record ``__adam_t__``.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from vcpcfg.core.optimizer import AdamState
from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b"VCPCFG1"
FORMAT_VERSION = 1
FIRST_MOMENT = "__adam_m__."
SECOND_MOMENT = "__adam_v__."
STEP_RECORD = "__adam_t__"


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    optimizer: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    vocab: List[str] = field(default_factory=list)
    version: int = FORMAT_VERSION


def _records(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    records = [(name, ckpt.params[name]) for name in sorted(ckpt.params)]
    records += [(FIRST_MOMENT + name, ckpt.optimizer.first[name]) for name in sorted(ckpt.optimizer.first)]
    records += [(SECOND_MOMENT + name, ckpt.optimizer.second[name]) for name in sorted(ckpt.optimizer.second)]
    records.append((STEP_RECORD, np.asarray(float(ckpt.optimizer.step))))
    return records


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    records = _records(ckpt)
    chunks = [MAGIC, struct.pack("<II", ckpt.version, len(records))]
    for name, value in records:
        encoded = name.encode("utf-8")
        value = np.asarray(value)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(np.asarray(value.shape, dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    meta = json.dumps({"epoch": ckpt.epoch, "history": ckpt.history, "config": ckpt.config,
                       "vocab": ckpt.vocab}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))
    logger.info("[CHECKPOINT] wrote %d records to %s", len(records), path)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.offset, self.path = data, 0, path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise DataError(f"{self.path}: truncated {what} at byte offset {self.offset}")
        chunk = self.data[self.offset: self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    reader = _Reader(data, path)
    if reader.take(len(MAGIC), "header") != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic at byte offset 0)")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    count = reader.u32("record count")

    params: Dict[str, np.ndarray] = {}
    first: Dict[str, np.ndarray] = {}
    second: Dict[str, np.ndarray] = {}
    step = 0
    for _ in range(count):
        start = reader.offset
        try:
            name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: invalid record name at byte offset {start}") from e
        rank = reader.u32("rank")
        shape = tuple(int(d) for d in np.frombuffer(reader.take(4 * rank, "dims"), dtype="<u4"))
        size = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(reader.take(4 * size, f"values of '{name}'"), dtype="<f4").reshape(shape)
        value = value.astype(np.float64)
        if name == STEP_RECORD:
            step = int(value)
        elif name.startswith(FIRST_MOMENT):
            first[name[len(FIRST_MOMENT):]] = value
        elif name.startswith(SECOND_MOMENT):
            second[name[len(SECOND_MOMENT):]] = value
        else:
            params[name] = value

    meta_start = reader.offset
    try:
        meta = json.loads(reader.take(reader.u32("metadata length"), "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed metadata at byte offset {meta_start}") from e
    if reader.offset != len(data):
        raise DataError(f"{path}: trailing bytes at byte offset {reader.offset}")
    return Checkpoint(params=params, optimizer=AdamState(first=first, second=second, step=step),
                      epoch=int(meta.get("epoch", 0)), history=list(meta.get("history", [])),
                      config=dict(meta.get("config", {})), vocab=list(meta.get("vocab", [])), version=version)


def round_to_storage(values: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Values as they come back from a checkpoint (float32 precision, float64 dtype)."""
    return {name: np.asarray(v, dtype=np.float32).astype(np.float64) for name, v in values.items()}
