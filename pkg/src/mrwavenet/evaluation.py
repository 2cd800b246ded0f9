"""Segment metrics, ROC-AUC, event detection ratio, run aggregation and Wilcoxon test."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

METRICS = ["precision", "recall", "specificity", "f1", "fpr", "auc", "detection_ratio"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class Metrics(NamedTuple):
    precision: float
    recall: float
    specificity: float
    f1: float
    fpr: float


class DetectionResult(NamedTuple):
    ratio: float
    detected: int
    total: int

    @property
    def defined(self) -> bool:
        return self.total > 0


def _binary(x, name):
    x = np.asarray(x)
    if x.size and not np.isin(x, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return x.astype(bool)


def confusion(predicted, truth) -> ConfusionCounts:
    predicted, truth = _binary(predicted, "predictions"), _binary(truth, "truth")
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    return ConfusionCounts(tp=int((predicted & truth).sum()),
                           fp=int((predicted & ~truth).sum()),
                           tn=int((~predicted & ~truth).sum()),
                           fn=int((~predicted & truth).sum()))


def _ratio(num, den):
    # every 0/0 corner is reported as 0
    return num / den if den else 0.0


def metrics(c: ConfusionCounts) -> Metrics:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return Metrics(precision, recall, _ratio(c.tn, c.tn + c.fp), f1,
                   _ratio(c.fp, c.fp + c.tn))


def roc_auc(scores, truth) -> float:
    """Trapezoidal area under the ROC curve; tied scores form one step."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = _binary(truth, "truth")
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC is undefined when only one class is present")
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(t)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0, tps] / n_pos
    fpr = np.r_[0, fps] / n_neg
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def detection_ratio(predicted, starts, window_sec, intervals) -> DetectionResult:
    """Fraction of annotated events overlapped by at least one positive segment.

    With no annotated events the ratio is 1.0 and ``total`` is 0.
    """
    predicted = _binary(predicted, "predictions")
    starts = np.asarray(starts, dtype=np.float64)
    ends = starts + window_sec
    hits = 0
    for onset, offset in intervals:
        overlap = (np.minimum(ends, offset) - np.maximum(starts, onset)) > 0
        hits += bool((overlap & predicted).any())
    total = len(intervals)
    return DetectionResult(hits / total if total else 1.0, hits, total)


def segment_report(predicted, truth, scores=None, starts=None, window_sec=None,
                   intervals=None) -> dict:
    """All metrics for one patient in one run."""
    counts = confusion(predicted, truth)
    row = metrics(counts)._asdict()
    row["auc"] = None
    if scores is not None:
        try:
            row["auc"] = roc_auc(scores, truth)
        except ValueError:
            pass
    row["detection_ratio"] = None
    if starts is not None and intervals is not None:
        det = detection_ratio(predicted, starts, window_sec, intervals)
        row["detection_ratio"] = det.ratio if det.defined else None
    row["counts"] = asdict(counts)
    return row


@dataclass
class EvalReport:
    per_patient: dict[str, dict] = field(default_factory=dict)
    aggregate: dict[str, float | None] = field(default_factory=dict)
    n_runs: int = 0
    title: str = ""
    runs: list[dict[str, dict]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"title": self.title, "n_runs": self.n_runs,
                           "per_patient": self.per_patient, "aggregate": self.aggregate,
                           "runs": self.runs}, indent=2, sort_keys=True)

    def to_text(self) -> str:
        head = ["Pt.ID", "Pre.", "Rec.", "Spe.", "F1", "AUC", "Det. Ratio"]
        lines = [self.title] if self.title else []
        rows = [[pid] + _fmt_row(m) for pid, m in sorted(self.per_patient.items())]
        rows.append(["Mean"] + _fmt_row(self.aggregate))
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
        fmt = lambda r: " | ".join(c.rjust(w) for c, w in zip(r, widths))
        lines.append(fmt(head))
        lines.append("-+-".join("-" * w for w in widths))
        lines.extend(fmt(r) for r in rows)
        return "\n".join(lines) + "\n"


def _fmt_row(m):
    def pct(v):
        return "--" if v is None else f"{100 * v:.2f}"

    def dec(v):
        return "--" if v is None else f"{v:.3f}"

    return [pct(m.get("precision")), pct(m.get("recall")), pct(m.get("specificity")),
            dec(m.get("f1")), dec(m.get("auc")), dec(m.get("detection_ratio"))]


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def aggregate(runs: list[dict[str, dict]], title: str = "") -> EvalReport:
    """Average each patient over runs, then take the unweighted mean over patients.

    Every metric is averaged on its own, so an aggregated F1 is the mean of
    per-run F1 values rather than F1 of the mean precision and recall.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    patients = set(runs[0])
    for i, run in enumerate(runs):
        if set(run) != patients:
            missing = sorted(patients ^ set(run))
            raise ValueError(f"run {i} does not cover the same patients (differs in {missing})")
    per_patient = {}
    for pid in sorted(patients):
        rows = [run[pid] for run in runs]
        per_patient[pid] = {k: _mean([r.get(k) for r in rows]) for k in METRICS}
    agg = {k: _mean([per_patient[p][k] for p in per_patient]) for k in METRICS}
    return EvalReport(per_patient, agg, len(runs), title, [dict(r) for r in runs])


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------

def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_upper_tail(ranks2, w2):
    """P(W+ >= w) and P(W+ <= w) under the null, ranks doubled to integers."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    counts /= counts.sum()
    return counts[w2:].sum(), counts[:w2 + 1].sum()


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> tuple[float, float]:
    """Paired two-sided Wilcoxon signed-rank test; returns (min(W+, W-), p)."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all paired differences are zero")
    if n < 5:
        raise ValueError(f"need at least 5 non-zero differences, got {n}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= exact_max_n:
        ranks2 = np.round(2 * ranks).astype(int)
        upper, lower = _exact_upper_tail(ranks2, int(round(2 * w_plus)))
        return stat, float(min(1.0, 2 * min(upper, lower)))
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts ** 3 - tie_counts).sum() / 48
    z = (w_plus - mean) / math.sqrt(var)
    return stat, float(math.erfc(abs(z) / math.sqrt(2)))
