"""ECOD anomaly scores and the mean-threshold rule used to veto seizure calls."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels

SKEW_TOL = 1e-9


def column_skewness(X: np.ndarray) -> np.ndarray:
    """Biased sample skewness per column; 0 for constant columns."""
    centered = X - X.mean(axis=0)
    m2 = (centered ** 2).mean(axis=0)
    m3 = (centered ** 3).mean(axis=0)
    out = np.zeros(X.shape[1])
    denom = m2 ** 1.5
    nz = denom > 0  # also false when a subnormal m2 underflows
    out[nz] = m3[nz] / denom[nz]
    return out


def ecod_scores(X) -> np.ndarray:
    """Outlier score per row of an (M, p) matrix from empirical-CDF tail probabilities.

    Each entry gets a left-tail score -log F_L and a right-tail score -log F_R
    against its own column. Columns with negative skew contribute their left
    tail to the automatic sum, the others their right tail. The row score is
    the largest of the three sums (left, right, automatic).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError(f"ECOD needs an (M >= 2, p >= 1) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("ECOD input contains non-finite values")
    left, right = _kernels.ecdf_tails(X)
    o_left = -np.log(left)
    o_right = -np.log(right)
    # a skewness within rounding of zero has no meaningful sign; use the right tail
    use_left = column_skewness(X) < -SKEW_TOL
    o_auto = np.where(use_left[None, :], o_left, o_right)
    sums = np.stack([o_left.sum(axis=1), o_right.sum(axis=1), o_auto.sum(axis=1)])
    return sums.max(axis=0)


@dataclass
class AnomalyResult:
    scores: np.ndarray
    mean: float
    flags: np.ndarray

    @property
    def count(self) -> int:
        return len(self.scores)


def threshold_rule(scores) -> AnomalyResult:
    """Flag segments whose score strictly exceeds the population mean."""
    scores = np.asarray(scores, dtype=np.float64)
    mu = float(scores.mean())
    return AnomalyResult(scores, mu, (scores > mu).astype(np.int8))


def fuse_labels(model_preds, anomaly_flags) -> np.ndarray:
    """Keep a seizure call only where the segment is also anomalous."""
    model_preds = np.asarray(model_preds)
    anomaly_flags = np.asarray(anomaly_flags)
    if model_preds.shape != anomaly_flags.shape:
        raise ValueError(f"length mismatch: {model_preds.shape} vs {anomaly_flags.shape}")
    return ((model_preds == 1) & (anomaly_flags == 1)).astype(np.int8)


def raw_segment_statistics(segments: np.ndarray) -> np.ndarray:
    """Per-channel standard deviation, line length and peak-to-peak of (M, C, N) segments."""
    seg = np.asarray(segments, dtype=np.float64)
    return np.concatenate([seg.std(axis=2),
                           np.abs(np.diff(seg, axis=2)).mean(axis=2),
                           np.ptp(seg, axis=2)], axis=1)


def write_scores_csv(path, segment_ids, result: AnomalyResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "score", "flag"])
        for sid, score, flag in zip(segment_ids, result.scores, result.flags):
            w.writerow([sid, repr(float(score)), int(flag)])
