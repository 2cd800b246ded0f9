"""EEG ingestion: EDF recordings, annotation CSV files and synthetic corpora."""
from __future__ import annotations

import csv
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# Standard 10-20 monopolar channel names, used to label synthetic recordings.
TEN_TWENTY = ["Fp1", "Fp2", "F7", "F8", "F3", "F4", "T3", "T4", "T5", "T6",
              "C3", "C4", "P3", "P4", "Fz", "Cz", "Pz", "O1", "O2"]


class EDFError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


class SyntheticError(ValueError):
    pass


@dataclass
class Recording:
    """Multichannel EEG held in memory, samples in microvolts (C x T)."""

    patient_id: str
    session_id: str
    channels: list[str]
    sample_rate: float
    samples: np.ndarray
    # per-channel (phys_min, phys_max, dig_min, dig_max) when read from EDF
    edf_scaling: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a C x T matrix")
        C, T = self.samples.shape
        if C < 1 or T < 1:
            raise ValueError(f"recording {self.session_id!r} is empty (C={C}, T={T})")
        if len(self.channels) != C:
            raise ValueError(f"{len(self.channels)} channel labels for {C} rows")
        if len(set(self.channels)) != C:
            raise ValueError("channel labels must be unique")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def replace(self, samples, sample_rate=None) -> Recording:
        return Recording(self.patient_id, self.session_id, list(self.channels),
                         self.sample_rate if sample_rate is None else sample_rate,
                         samples)


@dataclass
class AnnotationSet:
    recording_id: str
    intervals: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.intervals = sorted((float(a), float(b)) for a, b in self.intervals)
        for onset, offset in self.intervals:
            if not 0 <= onset < offset:
                raise AnnotationError(
                    f"{self.recording_id}: invalid interval ({onset}, {offset})")
        for (a0, b0), (a1, b1) in zip(self.intervals, self.intervals[1:]):
            if a1 < b0:
                raise AnnotationError(
                    f"{self.recording_id}: intervals ({a0}, {b0}) and ({a1}, {b1}) overlap")

    def check_duration(self, duration: float) -> None:
        for onset, offset in self.intervals:
            if offset > duration + 1e-9:
                raise AnnotationError(
                    f"{self.recording_id}: interval ({onset}, {offset}) ends after "
                    f"the recording ({duration} s)")

    @property
    def total_seconds(self) -> float:
        return sum(b - a for a, b in self.intervals)


# ---------------------------------------------------------------------------
# EDF
# ---------------------------------------------------------------------------

_MAIN_FIELDS = [("version", 8), ("patient", 80), ("recording", 80), ("date", 8),
                ("time", 8), ("header_bytes", 8), ("reserved", 44),
                ("n_records", 8), ("record_duration", 8), ("n_signals", 4)]
_SIGNAL_FIELDS = [("label", 16), ("transducer", 80), ("phys_dim", 8),
                  ("phys_min", 8), ("phys_max", 8), ("dig_min", 8), ("dig_max", 8),
                  ("prefilter", 80), ("samples_per_record", 8), ("reserved", 32)]
_NUMERIC = {"header_bytes": int, "n_records": int, "record_duration": float,
            "n_signals": int, "phys_min": float, "phys_max": float,
            "dig_min": int, "dig_max": int, "samples_per_record": int}


def _parse_field(raw: bytes, name: str, offset: int):
    text = raw.decode("ascii", errors="replace").strip()
    conv = _NUMERIC.get(name)
    if conv is None:
        return text
    try:
        return conv(text) if conv is float else int(float(text))
    except ValueError:
        raise EDFError(f"malformed numeric field {name!r} at byte offset {offset}: "
                       f"{text!r}") from None


def read_edf_header(buf: bytes) -> tuple[dict, list[dict]]:
    if len(buf) < 256:
        raise EDFError("file shorter than the 256-byte EDF main header")
    main, pos = {}, 0
    for name, width in _MAIN_FIELDS:
        main[name] = _parse_field(buf[pos:pos + width], name, pos)
        pos += width
    ns = main["n_signals"]
    if ns < 1:
        raise EDFError("header declares no signals")
    if len(buf) < 256 + 256 * ns:
        raise EDFError("file truncated inside the signal header block")
    signals = [{} for _ in range(ns)]
    for name, width in _SIGNAL_FIELDS:
        for sig in signals:
            sig[name] = _parse_field(buf[pos:pos + width], name, pos)
            pos += width
    return main, signals


def read_edf(path, patient_id: str | None = None) -> Recording:
    """Read an EDF file into a :class:`Recording` of physical values."""
    path = Path(path)
    buf = path.read_bytes()
    main, signals = read_edf_header(buf)
    spr_all = [s["samples_per_record"] for s in signals]
    rate_spr = Counter(spr_all).most_common(1)[0][0]
    keep = []
    for i, sig in enumerate(signals):
        if sig["samples_per_record"] != rate_spr:
            warnings.warn(f"{path.name}: skipping signal {sig['label']!r} with "
                          f"{sig['samples_per_record']} samples/record "
                          f"(expected {rate_spr})")
            continue
        if sig["dig_max"] == sig["dig_min"]:
            raise EDFError(f"{path.name}: signal {sig['label']!r} has dig_max == dig_min")
        keep.append(i)

    header_bytes = 256 + 256 * len(signals)
    record_words = sum(spr_all)
    data = buf[header_bytes:]
    n_avail = len(data) // (2 * record_words)
    n_records = main["n_records"]
    if n_records < 0:
        n_records = n_avail
    elif n_avail < n_records:
        raise EDFError(f"{path.name}: truncated data section, expected {n_records} "
                       f"records, found {n_avail}")
    words = np.frombuffer(data, dtype="<i2", count=n_records * record_words)
    words = words.reshape(n_records, record_words)
    starts = np.concatenate([[0], np.cumsum(spr_all)])

    rows, scaling = [], []
    for i in keep:
        sig = signals[i]
        dig = words[:, starts[i]:starts[i + 1]].reshape(-1).astype(np.float64)
        pmin, pmax, dmin, dmax = (sig["phys_min"], sig["phys_max"],
                                  sig["dig_min"], sig["dig_max"])
        rows.append((dig - dmin) * (pmax - pmin) / (dmax - dmin) + pmin)
        scaling.append((pmin, pmax, dmin, dmax))

    if patient_id is None:
        patient_id = main["patient"].split(" ")[0] or path.stem
    rate = rate_spr / main["record_duration"]
    samples = np.vstack(rows) if rows and n_records > 0 else np.zeros((len(rows), 0))
    try:
        rec = Recording(patient_id, path.stem, [signals[i]["label"] for i in keep],
                        rate, samples, edf_scaling=np.array(scaling))
    except ValueError as exc:
        raise EDFError(f"{path.name}: {exc}") from None
    return rec


def _fmt_num(value, width=8) -> str:
    if float(value).is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for prec in range(width, 0, -1):
        text = f"{value:.{prec}g}"
        if len(text) <= width:
            return text
    raise EDFError(f"cannot represent {value} in {width} characters")


def _field(text, width) -> bytes:
    raw = str(text).encode("ascii", errors="replace")[:width]
    return raw.ljust(width, b" ")


def write_edf(recording: Recording, path, record_duration: float = 1.0) -> None:
    """Write ``recording`` as 16-bit EDF.

    Reuses the scaling recorded when the recording was read from EDF, so a
    read/write round trip reproduces the original sample words. Otherwise the
    physical range is taken from the data.
    """
    spr_f = recording.sample_rate * record_duration
    spr = int(round(spr_f))
    if abs(spr - spr_f) > 1e-9:
        raise EDFError("sample_rate * record_duration must be an integer")
    C, T = recording.samples.shape
    n_records = -(-T // spr)

    if recording.edf_scaling is not None:
        scaling = np.asarray(recording.edf_scaling, dtype=np.float64)
    else:
        scaling = []
        for row in recording.samples:
            lo, hi = float(row.min()), float(row.max())
            if hi - lo < 1e-6:
                lo, hi = lo - 1.0, hi + 1.0
            scaling.append((np.floor(lo), np.ceil(hi), -32768, 32767))
        scaling = np.array(scaling)
    texts = [[_fmt_num(v) for v in row] for row in scaling]
    # use the values as they will be read back
    parsed = np.array([[float(t) for t in row] for row in texts])

    samples = np.zeros((C, n_records * spr))
    samples[:, :T] = recording.samples
    digital = np.empty((C, n_records * spr), dtype="<i2")
    for c in range(C):
        pmin, pmax, dmin, dmax = parsed[c]
        d = np.round((samples[c] - pmin) * (dmax - dmin) / (pmax - pmin) + dmin)
        digital[c] = np.clip(d, -32768, 32767).astype("<i2")
    if n_records * spr != T:
        warnings.warn(f"padding {n_records * spr - T} samples to complete the last record")

    header = b"".join([
        _field("0", 8), _field(f"{recording.patient_id} X X X", 80),
        _field(f"Startdate X X X {recording.session_id}", 80),
        _field("01.01.00", 8), _field("00.00.00", 8),
        _field(256 + 256 * C, 8), _field("", 44), _field(n_records, 8),
        _field(_fmt_num(record_duration), 8), _field(C, 4)])
    per_signal = [
        [_field(ch, 16) for ch in recording.channels],
        [_field("", 80)] * C,
        [_field("uV", 8)] * C,
        [_field(t[0], 8) for t in texts],
        [_field(t[1], 8) for t in texts],
        [_field(t[2], 8) for t in texts],
        [_field(t[3], 8) for t in texts],
        [_field("", 80)] * C,
        [_field(spr, 8)] * C,
        [_field("", 32)] * C,
    ]
    header += b"".join(b"".join(col) for col in per_signal)
    body = digital.reshape(C, n_records, spr).transpose(1, 0, 2).tobytes()
    Path(path).write_bytes(header + body)


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

ANNOTATION_HEADER = ["recording_id", "onset_sec", "offset_sec"]


def read_annotation_table(path) -> dict[str, AnnotationSet]:
    """Parse an annotation CSV holding any number of recordings."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ANNOTATION_HEADER:
            raise AnnotationError(f"{path}: expected header {','.join(ANNOTATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise AnnotationError(f"{path}: row {lineno} has {len(row)} fields")
            rid = row[0].strip()
            try:
                onset, offset = float(row[1]), float(row[2])
            except ValueError:
                raise AnnotationError(f"{path}: row {lineno} is not numeric") from None
            if offset <= onset:
                raise AnnotationError(
                    f"{path}: row {lineno}: offset {offset} <= onset {onset}")
            rows.setdefault(rid, []).append((onset, offset))
    return {rid: AnnotationSet(rid, ivs) for rid, ivs in rows.items()}


def read_annotations(path, recording_id: str | None = None) -> AnnotationSet:
    table = read_annotation_table(path)
    if recording_id is not None:
        return table.get(recording_id, AnnotationSet(recording_id))
    if len(table) != 1:
        raise AnnotationError(
            f"{path}: holds {len(table)} recordings; pass recording_id")
    return next(iter(table.values()))


def write_annotations(annotations, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ANNOTATION_HEADER)
        for ann in annotations:
            for onset, offset in ann.intervals:
                w.writerow([ann.recording_id, repr(onset), repr(offset)])


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_patients: int = 4
    duration_sec: float = 600.0
    seizure_count: int = 2
    seizure_len_sec: tuple[float, float] = (30.0, 60.0)
    noise_amplitude: float = 20.0
    burst_frequency: float = 5.0
    seed: int = 0
    n_channels: int = 4
    sample_rate: float = 256.0

    def __post_init__(self):
        if self.n_patients < 1 or self.n_channels < 1:
            raise SyntheticError("n_patients and n_channels must be >= 1")
        if self.seizure_count < 0:
            raise SyntheticError("seizure_count must be >= 0")
        lo, hi = self.seizure_len_sec
        if not 0 < lo <= hi:
            raise SyntheticError("seizure_len_sec must satisfy 0 < lo <= hi")
        if self.duration_sec <= 0 or self.sample_rate <= 0:
            raise SyntheticError("duration_sec and sample_rate must be positive")
        if self.n_channels > len(TEN_TWENTY):
            raise SyntheticError(f"at most {len(TEN_TWENTY)} channels")


def pink_noise(rng: np.random.Generator, n_channels: int, n: int, sample_rate: float,
               amplitude: float) -> np.ndarray:
    """1/f-shaped Gaussian noise with per-channel standard deviation ``amplitude``."""
    white = rng.standard_normal((n_channels, n))
    spec = np.fft.rfft(white, axis=1)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = 1.0 / np.sqrt(np.maximum(f, 0.5))
    noise = np.fft.irfft(spec * shape, n=n, axis=1)
    noise -= noise.mean(axis=1, keepdims=True)
    noise /= noise.std(axis=1, keepdims=True)
    return amplitude * noise


def _place_intervals(rng, spec: SyntheticSpec) -> list[tuple[float, float]]:
    if spec.seizure_count == 0:
        return []
    lo, hi = spec.seizure_len_sec
    lengths = rng.integers(int(np.ceil(lo)), int(np.floor(hi)) + 1, spec.seizure_count)
    free = int(np.floor(spec.duration_sec)) - int(lengths.sum())
    if free < 0:
        raise SyntheticError(f"{spec.seizure_count} seizures of up to {hi} s do not fit "
                             f"in {spec.duration_sec} s")
    # split the free time into count+1 integer gaps
    cuts = np.sort(rng.integers(0, free + 1, spec.seizure_count))
    gaps = np.diff(np.concatenate([[0], cuts]))
    intervals, t = [], 0
    for gap, length in zip(gaps, lengths):
        t += int(gap)
        intervals.append((float(t), float(t + length)))
        t += int(length)
    return intervals


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Recording], list[AnnotationSet]]:
    """Background 1/f noise with rhythmic bursts on all channels during seizures."""
    rng = np.random.default_rng(spec.seed)
    fs = spec.sample_rate
    n = int(round(spec.duration_sec * fs))
    t = np.arange(n) / fs
    channels = TEN_TWENTY[:spec.n_channels]
    recordings, annotations = [], []
    for p in range(spec.n_patients):
        pid = f"PN{p:02d}"
        sid = f"{pid}-1"
        samples = pink_noise(rng, spec.n_channels, n, fs, spec.noise_amplitude)
        intervals = _place_intervals(rng, spec)
        phases = rng.uniform(0, 2 * np.pi, spec.n_channels)
        amp = 3.0 * spec.noise_amplitude
        for onset, offset in intervals:
            i0, i1 = int(round(onset * fs)), int(round(offset * fs))
            tt = t[i0:i1, None]
            burst = (np.sin(2 * np.pi * spec.burst_frequency * tt + phases)
                     + 0.5 * np.sin(4 * np.pi * spec.burst_frequency * tt + 2 * phases))
            samples[:, i0:i1] += amp * burst.T
        recordings.append(Recording(pid, sid, list(channels), fs, samples))
        annotations.append(AnnotationSet(sid, intervals))
    return recordings, annotations
