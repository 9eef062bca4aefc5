"""Gate-score trace files.

Binary format (little-endian throughout):

    offset 0   magic, 16 bytes: b"MOEGATETRACE\\0v01"
    offset 16  header: u32 num_experts, u32 num_layers, u8 phase_present
    offset 25  records, each 11 + 4 * num_experts bytes:
                   u32 batch, u16 layer, u32 token, u8 phase,
                   f32[num_experts] scores
    trailer    u32 CRC32 of the payload (header bytes + record bytes)

The phase byte is written in every record; ``phase_present = 0`` in the
header marks the tags as filler rather than changing the record layout.
An NDJSON variant with the same fields (one object per line) is accepted
for debugging and selected by file extension (.ndjson / .jsonl).

Readers report violations with the exact byte offset (binary) or line
number (NDJSON) at which they were detected.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import InputError, TraceFormatError

MAGIC = b"MOEGATETRACE\0v01"
_HEADER = struct.Struct("<IIB")
_REC_FIXED = struct.Struct("<IHIB")
HEADER_SIZE = len(MAGIC) + _HEADER.size  # 25
_CRC_SIZE = 4

NDJSON_SUFFIXES = {".ndjson", ".jsonl"}


class Phase(IntEnum):
    PREFILL = 0
    DECODE = 1

    @property
    def label(self) -> str:
        return "prefill" if self is Phase.PREFILL else "decode"

    @classmethod
    def from_label(cls, label: str) -> "Phase":
        try:
            return {"prefill": cls.PREFILL, "decode": cls.DECODE}[label]
        except KeyError:
            raise InputError(f"unknown phase label {label!r}") from None


@dataclass(frozen=True)
class TraceHeader:
    num_experts: int
    num_layers: int
    phase_tagged: bool = True


@dataclass(frozen=True)
class TraceRecord:
    """One token's gate scores in one layer. Scores are stored as float32."""

    batch: int
    layer: int
    token: int
    phase: Phase
    scores: np.ndarray

    def validate_coords(self, header: TraceHeader, where: str):
        if self.scores.shape != (header.num_experts,):
            raise TraceFormatError(
                f"{where}: record has {self.scores.size} scores, "
                f"header says {header.num_experts}")
        if self.layer >= header.num_layers:
            raise TraceFormatError(
                f"{where}: layer {self.layer} >= num_layers {header.num_layers}")
        if self.batch < 0 or self.token < 0 or self.layer < 0:
            raise TraceFormatError(f"{where}: negative record coordinates")


def record_size(num_experts: int) -> int:
    return _REC_FIXED.size + 4 * num_experts


def is_ndjson_path(path) -> bool:
    return Path(path).suffix.lower() in NDJSON_SUFFIXES


class TraceWriter:
    """Streaming writer; emits the trailing CRC on close.

    A file abandoned before ``close()`` lacks its CRC and will be rejected
    on read, which is the intended partial-write marker.
    """

    def __init__(self, path, num_experts: int, num_layers: int,
                 phase_tagged: bool = True):
        if num_experts < 1 or num_layers < 1:
            raise InputError("num_experts and num_layers must be >= 1")
        self.path = Path(path)
        self.header = TraceHeader(num_experts, num_layers, phase_tagged)
        self.ndjson = is_ndjson_path(self.path)
        self.records_written = 0
        self._fh = open(self.path, "w" if self.ndjson else "wb")
        if not self.ndjson:
            self._crc = 0
            self._fh.write(MAGIC)
            head = _HEADER.pack(num_experts, num_layers, 1 if phase_tagged else 0)
            self._fh.write(head)
            self._crc = zlib.crc32(head, self._crc)

    def write(self, rec: TraceRecord):
        scores = np.asarray(rec.scores, dtype=np.float32)
        if scores.shape != (self.header.num_experts,):
            raise InputError(
                f"record has {scores.size} scores, writer expects "
                f"{self.header.num_experts}")
        if not 0 <= rec.layer < self.header.num_layers:
            raise InputError(
                f"record layer {rec.layer} outside [0, {self.header.num_layers})")
        if self.ndjson:
            obj = {
                "batch": int(rec.batch),
                "layer": int(rec.layer),
                "token": int(rec.token),
                "phase": Phase(rec.phase).label,
                "scores": [float(x) for x in scores],
            }
            self._fh.write(json.dumps(obj) + "\n")
        else:
            chunk = _REC_FIXED.pack(rec.batch, rec.layer, rec.token,
                                    int(rec.phase)) + scores.tobytes()
            self._fh.write(chunk)
            self._crc = zlib.crc32(chunk, self._crc)
        self.records_written += 1

    def close(self):
        if self._fh is None:
            return
        if not self.ndjson:
            self._fh.write(struct.pack("<I", self._crc & 0xFFFFFFFF))
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(path, num_experts: int, num_layers: int,
                records: Iterable[TraceRecord], phase_tagged: bool = True) -> int:
    """Write all records to ``path``; returns the record count."""
    with TraceWriter(path, num_experts, num_layers, phase_tagged) as w:
        for rec in records:
            w.write(rec)
        return w.records_written


def read_header(path) -> TraceHeader:
    header, _ = _read_binary(Path(path)) if not is_ndjson_path(path) \
        else _read_ndjson(Path(path))
    return header


def replay_trace(path) -> Iterator[TraceRecord]:
    """Yield validated records in file order.

    The whole file is read and checksummed up front (binary variant), so
    format errors surface before the first record is yielded. Scores are
    returned exactly as stored; probability validation happens where the
    records are consumed.
    """
    path = Path(path)
    if is_ndjson_path(path):
        _, records = _read_ndjson(path)
    else:
        _, records = _read_binary(path)
    yield from records


def read_trace(path) -> tuple[TraceHeader, list[TraceRecord]]:
    path = Path(path)
    return _read_ndjson(path) if is_ndjson_path(path) else _read_binary(path)


def _read_binary(path: Path) -> tuple[TraceHeader, list[TraceRecord]]:
    data = path.read_bytes()
    size = len(data)
    if size < len(MAGIC):
        raise TraceFormatError(
            f"{path}: truncated before end of magic at byte offset {size}",
            offset=size)
    if data[:len(MAGIC)] != MAGIC:
        raise TraceFormatError(f"{path}: bad magic at byte offset 0", offset=0)
    if size < HEADER_SIZE:
        raise TraceFormatError(
            f"{path}: truncated header at byte offset {size}", offset=size)
    num_experts, num_layers, phase_flag = _HEADER.unpack_from(data, len(MAGIC))
    if num_experts < 1 or num_layers < 1:
        raise TraceFormatError(
            f"{path}: header declares num_experts={num_experts}, "
            f"num_layers={num_layers}", offset=len(MAGIC))
    header = TraceHeader(num_experts, num_layers, bool(phase_flag))

    if size < HEADER_SIZE + _CRC_SIZE:
        raise TraceFormatError(
            f"{path}: truncated before CRC trailer at byte offset {size}",
            offset=size)
    rec_size = record_size(num_experts)
    body = data[HEADER_SIZE:size - _CRC_SIZE]
    if len(body) % rec_size != 0:
        raise TraceFormatError(
            f"{path}: truncated record at byte offset {size} "
            f"(record starting at {HEADER_SIZE + (len(body) // rec_size) * rec_size} "
            f"is incomplete)", offset=size)

    stored_crc = struct.unpack_from("<I", data, size - _CRC_SIZE)[0]
    actual_crc = zlib.crc32(data[len(MAGIC):size - _CRC_SIZE]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise TraceFormatError(
            f"{path}: CRC mismatch at byte offset {size - _CRC_SIZE}: "
            f"stored 0x{stored_crc:08x}, computed 0x{actual_crc:08x}",
            offset=size - _CRC_SIZE)

    records = []
    for off in range(0, len(body), rec_size):
        abs_off = HEADER_SIZE + off
        batch, layer, token, phase = _REC_FIXED.unpack_from(body, off)
        if phase not in (0, 1):
            raise TraceFormatError(
                f"{path}: invalid phase byte {phase} at byte offset "
                f"{abs_off + _REC_FIXED.size - 1}",
                offset=abs_off + _REC_FIXED.size - 1)
        scores = np.frombuffer(
            body, dtype="<f4", count=num_experts,
            offset=off + _REC_FIXED.size).copy()
        rec = TraceRecord(batch, layer, token, Phase(phase), scores)
        rec.validate_coords(header, f"{path}: record at byte offset {abs_off}")
        records.append(rec)
    return header, records


def _read_ndjson(path: Path) -> tuple[TraceHeader, list[TraceRecord]]:
    records = []
    num_experts = None
    max_layer = -1
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(
                    f"{path}: invalid JSON on line {lineno}: {exc}",
                    offset=lineno) from None
            try:
                scores = np.asarray(obj["scores"], dtype=np.float32)
                rec = TraceRecord(
                    int(obj["batch"]), int(obj["layer"]), int(obj["token"]),
                    Phase.from_label(obj["phase"]), scores)
            except (KeyError, TypeError, ValueError, InputError) as exc:
                raise TraceFormatError(
                    f"{path}: malformed record on line {lineno}: {exc}",
                    offset=lineno) from None
            if num_experts is None:
                num_experts = scores.size
            elif scores.size != num_experts:
                raise TraceFormatError(
                    f"{path}: line {lineno} has {scores.size} scores, "
                    f"previous records had {num_experts}", offset=lineno)
            max_layer = max(max_layer, rec.layer)
            records.append(rec)
    if num_experts is None:
        raise TraceFormatError(f"{path}: empty NDJSON trace", offset=0)
    header = TraceHeader(num_experts, max_layer + 1, True)
    return header, records
