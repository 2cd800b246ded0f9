"""Filtering, resampling and fixed-window segmentation of recordings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .dataio import AnnotationSet, Recording


class FilterDesignError(ValueError):
    pass


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "bandpass_fir" or "notch_iir"
    low_hz: float = 1.0
    high_hz: float = 60.0
    num_taps: int = 2001
    center_hz: float = 50.0
    q_factor: float = 35.0

    def validate(self, sample_rate: float) -> None:
        nyq = sample_rate / 2
        if self.kind == "bandpass_fir":
            if not 0 < self.low_hz < self.high_hz < nyq:
                raise FilterDesignError(
                    f"bandpass needs 0 < low < high < {nyq} Hz, got "
                    f"({self.low_hz}, {self.high_hz})")
            if self.num_taps < 3 or self.num_taps % 2 == 0:
                raise FilterDesignError("num_taps must be odd and >= 3")
        elif self.kind == "notch_iir":
            if not 0 < self.center_hz < nyq:
                raise FilterDesignError(f"notch center must lie in (0, {nyq}) Hz")
            if self.q_factor <= 0:
                raise FilterDesignError("q_factor must be positive")
        else:
            raise FilterDesignError(f"unknown filter kind {self.kind!r}")


@dataclass
class Segment:
    recording_id: str
    start_sec: float
    data: np.ndarray  # C x N
    label: int
    patient_id: str = ""


def _lowpass_sinc(cutoff: float, n: np.ndarray) -> np.ndarray:
    # ideal low-pass impulse response, cutoff as a fraction of the sample rate
    return 2 * cutoff * np.sinc(2 * cutoff * n)


def design_bandpass(low_hz, high_hz, sample_rate, num_taps=2001) -> np.ndarray:
    """Hamming-windowed sinc bandpass, normalised to unit gain mid-band."""
    FilterSpec("bandpass_fir", low_hz, high_hz, num_taps).validate(sample_rate)
    n = np.arange(num_taps) - (num_taps - 1) / 2
    h = (_lowpass_sinc(high_hz / sample_rate, n)
         - _lowpass_sinc(low_hz / sample_rate, n)) * np.hamming(num_taps)
    mid = 0.5 * (low_hz + high_hz)
    return h / abs(fir_response(h, mid, sample_rate))


def design_lowpass(cutoff_hz, sample_rate, num_taps) -> np.ndarray:
    """Hamming-windowed sinc low-pass with unit DC gain."""
    n = np.arange(num_taps) - (num_taps - 1) / 2
    h = _lowpass_sinc(cutoff_hz / sample_rate, n) * np.hamming(num_taps)
    return h / h.sum()


def fir_response(h, freq_hz, sample_rate):
    """Complex frequency response of FIR taps by direct DTFT summation."""
    k = np.arange(len(h))
    w = 2 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=float)) / sample_rate
    resp = np.exp(-1j * np.outer(w, k)) @ h
    return resp if np.ndim(freq_hz) else resp[0]


def design_notch(center_hz, q_factor, sample_rate) -> tuple[np.ndarray, np.ndarray]:
    """Second-order IIR notch (b, a), unit gain at DC and Nyquist."""
    FilterSpec("notch_iir", center_hz=center_hz, q_factor=q_factor).validate(sample_rate)
    w0 = 2 * np.pi * center_hz / sample_rate
    alpha = np.sin(w0) / (2 * q_factor)
    cw = np.cos(w0)
    b = np.array([1.0, -2 * cw, 1.0])
    a = np.array([1 + alpha, -2 * cw, 1 - alpha])
    return b / a[0], a / a[0]


def iir_response(b, a, freq_hz, sample_rate):
    z = np.exp(1j * 2 * np.pi * np.asarray(freq_hz, dtype=float) / sample_rate)
    num = sum(bk * z ** (-k) for k, bk in enumerate(b))
    den = sum(ak * z ** (-k) for k, ak in enumerate(a))
    return num / den


def fir_zero_phase(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Apply symmetric FIR taps along the last axis with group-delay compensation.

    Edges are reflection padded by half the filter length; the 'valid' part of
    the convolution then lines up sample for sample with the input.
    """
    half = (len(h) - 1) // 2
    T = x.shape[-1]
    if T <= half:
        raise FilterDesignError(
            f"signal of {T} samples is shorter than the filter half-length {half}")
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(half, half)], mode="reflect")
    return signal.oaconvolve(padded, h[(None,) * (x.ndim - 1)], mode="valid", axes=-1)


def iir_zero_phase(x: np.ndarray, b, a) -> np.ndarray:
    # pad long enough for the notch ringing to die out before the data starts
    poles = np.abs(np.roots(a))
    r = min(float(poles.max()), 1 - 1e-6) if len(poles) else 0.0
    settle = int(np.ceil(np.log(1e-6) / np.log(r))) if r > 0 else 3
    padlen = min(x.shape[-1] - 1, max(3 * len(a), settle))
    return signal.filtfilt(b, a, x, axis=-1, padtype="odd", padlen=padlen)


def apply_zero_phase(recording: Recording, filters) -> Recording:
    x = recording.samples
    for spec in filters:
        spec.validate(recording.sample_rate)
        if spec.kind == "bandpass_fir":
            h = design_bandpass(spec.low_hz, spec.high_hz, recording.sample_rate,
                                spec.num_taps)
            x = fir_zero_phase(x, h)
        else:
            if x.shape[-1] <= 6:
                raise FilterDesignError("recording shorter than the notch filter order")
            b, a = design_notch(spec.center_hz, spec.q_factor, recording.sample_rate)
            x = iir_zero_phase(x, b, a)
    return recording.replace(np.ascontiguousarray(x))


def rational_ratio(source_hz, target_hz, max_denominator=10000) -> tuple[int, int]:
    ratio = Fraction(str(float(target_hz))) / Fraction(str(float(source_hz)))
    if ratio.denominator > max_denominator:
        raise FilterDesignError(
            f"resampling ratio {ratio} has denominator > {max_denominator}")
    return ratio.numerator, ratio.denominator


def resample(recording: Recording, target_hz: float, half_width: int = 10) -> Recording:
    """Polyphase rational resampling with a Hamming-windowed sinc anti-alias kernel."""
    if target_hz <= 0:
        raise FilterDesignError("target_hz must be positive")
    up, down = rational_ratio(recording.sample_rate, target_hz)
    if up == down:
        return recording.replace(recording.samples.copy())
    m = max(up, down)
    # cutoff at the lower of the two Nyquist rates, on the upsampled grid
    # resample_poly scales the taps by ``up`` itself
    h = design_lowpass(0.5 / m, 1.0, 2 * half_width * m + 1)
    y = signal.resample_poly(recording.samples, up, down, axis=1, window=h)
    n_out = int(round(recording.n_samples * up / down))
    if y.shape[1] < n_out:
        y = np.pad(y, ((0, 0), (0, n_out - y.shape[1])))
    return recording.replace(np.ascontiguousarray(y[:, :n_out]), sample_rate=float(target_hz))


def samples_per_window(window_sec: float, sample_rate: float) -> int:
    n = window_sec * sample_rate
    if abs(n - round(n)) > 1e-9:
        raise SegmentationError(f"W*F_s = {n} is not an integer number of samples")
    return int(round(n))


def seizure_overlap(start: float, end: float, intervals) -> float:
    return sum(max(0.0, min(end, b) - max(start, a)) for a, b in intervals)


def label_window(start: float, window_sec: float, intervals) -> int:
    return int(seizure_overlap(start, start + window_sec, intervals) >= 0.5 * window_sec)


def window_starts(t0: float, t1: float, window_sec: float, overlap_fraction: float):
    """Start times of full windows of length W inside [t0, t1]."""
    step = window_sec * (1 - overlap_fraction)
    span = t1 - t0 - window_sec
    if span < -1e-9:
        return []
    count = int(math.floor(span / step + 1e-9)) + 1
    return [t0 + k * step for k in range(count)]


def segmentize(recording: Recording, annotations: AnnotationSet | None, window_sec: float,
               overlap_fraction: float = 0.0, span=None) -> list[Segment]:
    """Cut fixed windows and label each by >= 50% overlap with a seizure interval.

    ``span`` restricts windows to a (start, end) range in seconds; used to
    oversample inside annotated seizures.
    """
    if window_sec <= 0:
        raise SegmentationError("window_sec must be positive")
    if not 0 <= overlap_fraction < 1:
        raise SegmentationError("overlap_fraction must lie in [0, 1)")
    fs = recording.sample_rate
    n = samples_per_window(window_sec, fs)
    if recording.duration < window_sec:
        raise SegmentationError(
            f"{recording.session_id}: duration {recording.duration} s shorter than W")
    intervals = annotations.intervals if annotations is not None else []
    t0, t1 = (0.0, recording.duration) if span is None else span
    t1 = min(t1, recording.duration)
    out = []
    for start in window_starts(t0, t1, window_sec, overlap_fraction):
        i0 = int(round(start * fs))
        if i0 + n > recording.n_samples:
            break
        out.append(Segment(recording.session_id, start, recording.samples[:, i0:i0 + n],
                           label_window(start, window_sec, intervals),
                           recording.patient_id))
    return out


def preprocess(recording: Recording, filters, target_hz: float | None = None,
               resample_first: bool = True) -> Recording:
    """Resample then filter (or the reverse) as configured."""
    if target_hz is not None and resample_first:
        recording = resample(recording, target_hz)
    recording = apply_zero_phase(recording, filters)
    if target_hz is not None and not resample_first:
        recording = resample(recording, target_hz)
    return recording
