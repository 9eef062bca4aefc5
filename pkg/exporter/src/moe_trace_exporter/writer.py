"""Binary gate-score trace writer.

Implements the trace file format consumed by the moelab harness (the
interface between the two packages is the file format itself):

    magic  b"MOEGATETRACE\\0v01" (16 bytes, little-endian file throughout)
    header u32 num_experts, u32 num_layers, u8 phase_present
    record u32 batch, u16 layer, u32 token, u8 phase, f32[num_experts]
    trailer u32 CRC32 over header + records

A writer abandoned before ``close()`` leaves no CRC trailer, which marks
the file as partial/invalid for readers.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"MOEGATETRACE\0v01"
_HEADER = struct.Struct("<IIB")
_REC_FIXED = struct.Struct("<IHIB")

PHASE_PREFILL = 0
PHASE_DECODE = 1


class TraceFileWriter:
    def __init__(self, path, num_experts: int, num_layers: int):
        if num_experts < 1 or num_layers < 1:
            raise ValueError("num_experts and num_layers must be >= 1")
        self.path = Path(path)
        self.num_experts = num_experts
        self.num_layers = num_layers
        self.records_written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(MAGIC)
        head = _HEADER.pack(num_experts, num_layers, 1)
        self._fh.write(head)
        self._crc = zlib.crc32(head)

    def write(self, batch: int, layer: int, token: int, phase: int, scores):
        arr = np.asarray(scores, dtype="<f4")
        if arr.shape != (self.num_experts,):
            raise ValueError(
                f"expected {self.num_experts} scores, got shape {arr.shape}")
        if not 0 <= layer < self.num_layers:
            raise ValueError(f"layer {layer} outside [0, {self.num_layers})")
        if phase not in (PHASE_PREFILL, PHASE_DECODE):
            raise ValueError(f"bad phase {phase}")
        chunk = _REC_FIXED.pack(batch, layer, token, phase) + arr.tobytes()
        self._fh.write(chunk)
        self._crc = zlib.crc32(chunk, self._crc)
        self.records_written += 1

    def close(self):
        if self._fh is None:
            return
        self._fh.write(struct.pack("<I", self._crc & 0xFFFFFFFF))
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        # Surface I/O/runtime failures but only finalize the CRC on clean
        # exit; an aborted run leaves a trailer-less (invalid) file.
        if exc_type is None:
            self.close()
        elif self._fh is not None:
            self._fh.close()
            self._fh = None
        return False
