"""Binary segment store written by ``preprocess`` and read by ``train``/``evaluate``.

Layout (little endian)::

    magic   8 bytes  b"MRWNSEG1"
    C, N    uint32, uint32
    F_s     float64
    count   uint32
    count x { recording_id (uint16 length + utf-8), patient_id (same),
              start_sec float64, label uint8, kind uint8,
              C*N float32 samples, row major }
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dsp import Segment

MAGIC = b"MRWNSEG1"

# kind codes
TEST = 0
ICTAL = 1
INTERICTAL = 2


class StoreError(ValueError):
    pass


@dataclass
class SegmentStore:
    channels: int
    n_samples: int
    sample_rate: float
    segments: list[Segment]
    kinds: np.ndarray

    def select(self, kind=None, patient_id=None):
        out = []
        for seg, k in zip(self.segments, self.kinds):
            if kind is not None and k != kind:
                continue
            if patient_id is not None and seg.patient_id != patient_id:
                continue
            out.append(seg)
        return out

    @property
    def patients(self) -> list[str]:
        return sorted({s.patient_id for s in self.segments})


def _pack_str(text: str) -> bytes:
    raw = text.encode()
    return struct.pack("<H", len(raw)) + raw


def write_store(path, segments, kinds, channels, n_samples, sample_rate) -> None:
    parts = [MAGIC, struct.pack("<IIdI", channels, n_samples, float(sample_rate),
                                len(segments))]
    for seg, kind in zip(segments, kinds):
        if seg.data.shape != (channels, n_samples):
            raise StoreError(f"segment {seg.recording_id}@{seg.start_sec} has shape "
                             f"{seg.data.shape}, store expects {(channels, n_samples)}")
        parts += [_pack_str(seg.recording_id), _pack_str(seg.patient_id),
                  struct.pack("<dBB", float(seg.start_sec), int(seg.label), int(kind)),
                  np.ascontiguousarray(seg.data, dtype="<f4").tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_store(path) -> SegmentStore:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise StoreError(f"{path}: not a segment store")
    C, N, fs, count = struct.unpack_from("<IIdI", data, 8)
    pos = 8 + struct.calcsize("<IIdI")
    segments, kinds = [], np.empty(count, dtype=np.int8)
    block = 4 * C * N
    for i in range(count):
        strings = []
        for _ in range(2):
            (n,) = struct.unpack_from("<H", data, pos)
            strings.append(data[pos + 2:pos + 2 + n].decode())
            pos += 2 + n
        start, label, kind = struct.unpack_from("<dBB", data, pos)
        pos += struct.calcsize("<dBB")
        if pos + block > len(data):
            raise StoreError(f"{path}: truncated at segment {i}")
        arr = np.frombuffer(data, dtype="<f4", count=C * N, offset=pos).reshape(C, N)
        pos += block
        segments.append(Segment(strings[0], start, arr, label, strings[1]))
        kinds[i] = kind
    return SegmentStore(C, N, fs, segments, kinds)
