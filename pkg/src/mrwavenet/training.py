"""Class-balanced corpora, leave-one-subject-out splits and the training loop."""
from __future__ import annotations

import copy
import csv
import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import dsp, nn
from .dataio import AnnotationSet, Recording
from .model import MREEGWaveNet, ModelConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainProtocol:
    batch_size: int = 32
    max_epochs: int = 300
    learning_rate: float = 1e-3
    class_weights: tuple[float, float] = (0.75, 1.5)
    patience: int = 30
    # validation loss must drop by more than this to count as an improvement
    min_delta: float = 1e-4
    runs_per_patient: int = 3
    val_fraction: float = 0.2
    seizure_overlap: float = 0.8
    nonseizure_ratio: float = 2.0
    interictal_margin_sec: float = 60.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate < 0 or self.min_delta < 0:
            raise ValueError("learning_rate and min_delta must be >= 0")
        if min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if not 0 <= self.seizure_overlap < 1:
            raise ValueError("seizure_overlap must lie in [0, 1)")
        if self.nonseizure_ratio < 1:
            raise ValueError("nonseizure_ratio must be >= 1")
        if self.runs_per_patient < 1 or self.interictal_margin_sec < 0:
            raise ValueError("runs_per_patient >= 1 and interictal_margin_sec >= 0 required")


@dataclass(frozen=True)
class LosoSplit:
    test_patient_id: str
    train_patient_ids: tuple[str, ...]
    run_index: int

    @property
    def name(self) -> str:
        return f"{self.test_patient_id}_run{self.run_index}"


def stable_seed(*parts) -> np.random.SeedSequence:
    """Seed sequence from ints and strings, independent of Python's hash salt."""
    words = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(words)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------

def ictal_starts(annotations: AnnotationSet, window_sec, overlap, duration):
    """Oversampled window starts inside every annotated seizure."""
    out = []
    for onset, offset in annotations.intervals:
        out.extend(dsp.window_starts(onset, min(offset, duration), window_sec, overlap))
    return out


def interictal_starts(annotations: AnnotationSet, window_sec, step, margin, duration):
    """Candidate starts whose window stays ``margin`` seconds clear of every seizure."""
    out = []
    for start in dsp.window_starts(0.0, duration, window_sec, 1 - step / window_sec):
        end = start + window_sec
        if all(start >= off + margin or end <= on - margin
               for on, off in annotations.intervals):
            out.append(start)
    return out


def select_interictal(candidates, n_wanted, rng, recording_id=""):
    candidates = list(candidates)
    if n_wanted > len(candidates):
        warnings.warn(f"{recording_id}: wanted {n_wanted} interictal windows, only "
                      f"{len(candidates)} available; taking all")
        n_wanted = len(candidates)
    idx = np.sort(rng.choice(len(candidates), n_wanted, replace=False))
    return [candidates[i] for i in idx]


def _cut(recording: Recording, start, window_sec, label):
    n = dsp.samples_per_window(window_sec, recording.sample_rate)
    i0 = int(round(start * recording.sample_rate))
    return dsp.Segment(recording.session_id, start, recording.samples[:, i0:i0 + n],
                       label, recording.patient_id)


def build_train_corpus(recordings, annotations, protocol: TrainProtocol, window_sec,
                       seed=None) -> list[dsp.Segment]:
    """Oversampled seizure windows plus randomly drawn interictal windows per recording."""
    seed = protocol.seed if seed is None else seed
    by_id = {a.recording_id: a for a in annotations}
    step = window_sec * (1 - protocol.seizure_overlap)
    corpus = []
    for rec in recordings:
        ann = by_id.get(rec.session_id, AnnotationSet(rec.session_id))
        ictal = ictal_starts(ann, window_sec, protocol.seizure_overlap, rec.duration)
        if not ictal:
            continue
        cands = interictal_starts(ann, window_sec, step, protocol.interictal_margin_sec,
                                  rec.duration)
        rng = np.random.default_rng(stable_seed(seed, rec.session_id))
        n_wanted = int(round(protocol.nonseizure_ratio * len(ictal)))
        chosen = select_interictal(cands, n_wanted, rng, rec.session_id)
        corpus.extend(_cut(rec, s, window_sec, 1) for s in ictal)
        corpus.extend(_cut(rec, s, window_sec, 0) for s in chosen)
    return corpus


def make_loso_splits(patient_ids, runs) -> list[LosoSplit]:
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    if len(ids) < 2:
        raise ValueError("LOSO needs at least two patients")
    ids = sorted(ids)
    return [LosoSplit(test, tuple(p for p in ids if p != test), run)
            for run in range(runs) for test in ids]


def stratified_split(labels, val_fraction, rng):
    """Indices (train, val) with each class split at ``val_fraction``."""
    labels = np.asarray(labels)
    train, val = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params, self.lr = params, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainResult:
    model: MREEGWaveNet
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)


def stack(segments, dtype=np.float32) -> np.ndarray:
    return np.stack([s.data for s in segments]).astype(dtype, copy=False)


def segment_key(seg: dsp.Segment) -> str:
    return f"{seg.recording_id}@{seg.start_sec:.3f}"


def evaluate_loss(model: MREEGWaveNet, x, y, class_weights, batch_size=64) -> float:
    num = den = 0.0
    w = np.asarray(class_weights, dtype=np.float64)
    for i in range(0, len(y), batch_size):
        lp, _ = model.forward(x[i:i + batch_size], train=False)
        yb = y[i:i + batch_size]
        wb = w[yb]
        num += float(-(wb * lp[np.arange(len(yb)), yb]).sum())
        den += float(wb.sum())
    return num / den


def train(split: LosoSplit, corpus, config: ModelConfig, protocol: TrainProtocol,
          dtype=np.float32, epoch_callback=None) -> TrainResult:
    """Adam on class-weighted NLL with early stopping on validation loss.

    Returns the parameters (and batch-norm statistics) of the epoch with the
    lowest validation loss.
    """
    protocol.validate()
    train_set = set(split.train_patient_ids)
    segs = [s for s in corpus if s.patient_id in train_set]
    leaked = [s for s in segs if s.patient_id == split.test_patient_id]
    if leaked:
        raise TrainingError(f"{len(leaked)} test-patient segments in the training corpus")
    if not segs:
        raise TrainingError(f"{split.name}: empty training corpus")

    ss = stable_seed(protocol.seed, split.run_index, split.test_patient_id)
    init_seed, split_seed, shuffle_seed = ss.spawn(3)
    labels = np.array([s.label for s in segs], dtype=np.int64)
    tr_idx, va_idx = stratified_split(labels, protocol.val_fraction,
                                      np.random.default_rng(split_seed))
    if len(va_idx) == 0:
        raise TrainingError("validation set is empty")
    x = stack(segs, dtype)
    x_tr, y_tr = x[tr_idx], labels[tr_idx]
    x_va, y_va = x[va_idx], labels[va_idx]

    model = MREEGWaveNet(config, seed=np.random.default_rng(init_seed).integers(2 ** 63),
                         dtype=dtype)
    params = model.parameters()
    opt = Adam(params, protocol.learning_rate, protocol.beta1, protocol.beta2,
               protocol.adam_eps)
    rng = np.random.default_rng(shuffle_seed)
    result = TrainResult(model, train_ids=[segment_key(segs[i]) for i in tr_idx],
                         val_ids=[segment_key(segs[i]) for i in va_idx])
    best_loss, best_state, wait = math.inf, None, 0
    for epoch in range(1, protocol.max_epochs + 1):
        order = rng.permutation(len(y_tr))
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(order), protocol.batch_size)):
            idx = order[i:i + protocol.batch_size]
            if len(idx) < 2:
                # a single sample cannot feed train-mode batch norm
                continue
            loss = model.loss_and_backward(x_tr[idx], y_tr[idx], protocol.class_weights)
            if not math.isfinite(loss):
                raise TrainingError(f"{split.name}: non-finite loss at epoch {epoch}, "
                                    f"batch {b}")
            opt.step(model.gradients())
            total += loss * len(idx)
            count += len(idx)
        train_loss = total / max(count, 1)
        val_loss = evaluate_loss(model, x_va, y_va, protocol.class_weights)
        if not math.isfinite(val_loss):
            raise TrainingError(f"{split.name}: non-finite validation loss at epoch {epoch}")
        result.trace.append((epoch, train_loss, val_loss))
        if epoch_callback is not None:
            epoch_callback(epoch, train_loss, val_loss)
        if val_loss < best_loss - protocol.min_delta:
            best_loss, wait = val_loss, 0
            best_state = copy.deepcopy(model.state())
            result.best_epoch = epoch
        else:
            wait += 1
            if wait >= protocol.patience:
                break
    model.load_state(best_state)
    return result


def predict_segments(model: MREEGWaveNet, x, batch_size=64):
    """Eval-mode predictions: (labels, log-prob of class 1, K-feature matrix)."""
    x = np.asarray(x)
    n = model.config.n_samples
    if x.ndim != 3 or x.shape[2] != n:
        raise nn.ShapeError(f"segments must have {n} samples, got shape {x.shape}")
    lps, feats = [], []
    for i in range(0, len(x), batch_size):
        lp, f = model.forward(x[i:i + batch_size], train=False)
        lps.append(lp)
        feats.append(f)
    lp = np.concatenate(lps) if lps else np.zeros((0, 2))
    features = np.concatenate(feats) if feats else np.zeros((0, 0))
    return lp.argmax(axis=1).astype(np.int8), lp[:, 1], features


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in trace:
            w.writerow([epoch, repr(float(tl)), repr(float(vl))])
