"""
Image feature tables.

Binary layout: b"VCFEAT1", u32 rows, u32 dim, rows*dim float32, all little-endian.
JSON-lines layout: one JSON array of numbers per line.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b"VCFEAT1"
HEADER = len(MAGIC) + 8


@dataclass(frozen=True)
class FeatureTable:
    values: np.ndarray   # (rows, dim) float64

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def row(self, index: int) -> np.ndarray:
        return self.values[index]


def _load_binary(path: Path, data: bytes) -> FeatureTable:
    if len(data) < HEADER:
        raise DataError(f"{path}: truncated header at byte offset {len(data)}")
    rows, dim = struct.unpack("<II", data[len(MAGIC):HEADER])
    expected = HEADER + 4 * rows * dim
    if len(data) != expected:
        offset = min(len(data), expected)
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{dim} features, "
                        f"found {len(data)} (mismatch at byte offset {offset})")
    values = np.frombuffer(data, dtype="<f4", offset=HEADER).reshape(rows, dim).astype(np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = (int(x) for x in bad[0])
        raise DataError(f"{path}: non-finite feature at byte offset {HEADER + 4 * (r * dim + c)}")
    return FeatureTable(values)


def _load_jsonl(path: Path, data: bytes) -> FeatureTable:
    rows, offset, dim = [], 0, None
    for line in data.splitlines(keepends=True):
        text = line.strip()
        if text:
            try:
                row = np.asarray(json.loads(text.decode("utf-8")), dtype=np.float64)
            except (ValueError, UnicodeDecodeError) as e:
                raise DataError(f"{path}: malformed feature row at byte offset {offset}") from e
            if row.ndim != 1 or (dim is not None and row.size != dim):
                raise DataError(f"{path}: feature row of wrong dimension at byte offset {offset}")
            if not np.all(np.isfinite(row)):
                raise DataError(f"{path}: non-finite feature at byte offset {offset}")
            dim = row.size
            rows.append(row)
        offset += len(line)
    if not rows:
        raise DataError(f"{path}: no feature rows")
    return FeatureTable(np.stack(rows))


def load_features(path: Path) -> FeatureTable:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read feature file {path}: {e}") from e
    table = _load_binary(path, data) if data.startswith(MAGIC) else _load_jsonl(path, data)
    logger.info("[FEATURES] %s: %d rows of dimension %d", path, table.rows, table.dim)
    return table


def save_features(path: Path, values: np.ndarray, fmt: str = "binary") -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"feature table must be 2-D, got shape {values.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if fmt == "binary":
        payload = MAGIC + struct.pack("<II", *values.shape) + np.ascontiguousarray(values, dtype="<f4").tobytes()
        Path(path).write_bytes(payload)
    elif fmt == "jsonl":
        lines = [json.dumps([float(x) for x in row]) for row in values]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise DataError(f"unknown feature format '{fmt}'")
