import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mrwavenet import evaluation as ev
from oracles import enumerate_wilcoxon, pair_count_auc

# patient-wise rows (precision %, recall %, specificity %, F1, AUC, detection ratio)
# of the multiresolution model with post-processing on the public corpus
TABLE_A2 = {
    "Pt-00": (86.96, 91.03, 99.68, 0.888, 0.998, 1.000),
    "Pt-01": (30.89, 100.00, 98.11, 0.405, 0.999, 1.000),
    "Pt-03": (2.39, 90.91, 90.30, 0.047, 0.952, 1.000),
    "Pt-05": (2.15, 55.56, 89.35, 0.041, 0.966, 1.000),
    "Pt-06": (47.09, 76.25, 99.52, 0.581, 0.991, 1.000),
    "Pt-07": (2.05, 87.78, 92.24, 0.040, 0.963, 1.000),
    "Pt-09": (73.78, 88.41, 99.81, 0.801, 0.995, 1.000),
    "Pt-10": (13.02, 40.07, 97.50, 0.162, 0.778, 0.444),
    "Pt-11": (6.85, 83.33, 90.28, 0.122, 0.827, 1.000),
    "Pt-12": (9.76, 89.59, 89.04, 0.175, 0.945, 1.000),
    "Pt-13": (13.88, 94.32, 95.32, 0.241, 0.981, 1.000),
    "Pt-14": (4.70, 62.27, 97.24, 0.086, 0.918, 0.750),
    "Pt-16": (11.03, 68.18, 92.33, 0.187, 0.912, 1.000),
    "Pt-17": (97.22, 87.55, 99.98, 0.921, 0.965, 1.000),
}
TABLE_A2_MEAN = (28.70, 79.66, 95.05, 0.336, 0.942, 0.942)


def table_a2_run():
    return {pid: {"precision": p / 100, "recall": r / 100, "specificity": s / 100, "f1": f,
                  "fpr": 1 - s / 100, "auc": a, "detection_ratio": d}
            for pid, (p, r, s, f, a, d) in TABLE_A2.items()}


def counts_vectors(tp, fp, fn, tn):
    pred = [1] * tp + [1] * fp + [0] * fn + [0] * tn
    truth = [1] * tp + [0] * fp + [1] * fn + [0] * tn
    return np.array(pred), np.array(truth)


# ---------------------------------------------------------------------------
# confusion and metrics
# ---------------------------------------------------------------------------

def test_confusion_examples():
    z = np.zeros(100, dtype=int)
    assert ev.confusion(z, z) == ev.ConfusionCounts(tn=100)
    t = np.array([0, 1, 1, 0])
    c = ev.confusion(1 - t, t)
    assert c.tp == 0 and c.tn == 0
    assert ev.confusion(*counts_vectors(8, 2, 2, 88)) == ev.ConfusionCounts(8, 2, 88, 2)


def test_metrics_fixture():
    m = ev.metrics(ev.ConfusionCounts(tp=8, fp=2, tn=88, fn=2))
    assert m.precision == pytest.approx(0.8)
    assert m.recall == pytest.approx(0.8)
    assert m.specificity == pytest.approx(88 / 90)
    assert round(m.specificity, 4) == 0.9778
    assert m.f1 == pytest.approx(0.8)
    assert round(m.fpr, 4) == 0.0222


def test_metrics_degenerate():
    m = ev.metrics(ev.ConfusionCounts(tn=10, fn=3))
    assert m.precision == 0 and m.f1 == 0
    m = ev.metrics(ev.ConfusionCounts())
    assert m == ev.Metrics(0.0, 0.0, 0.0, 0.0, 0.0)
    m = ev.metrics(ev.ConfusionCounts(tp=5, tn=7))
    assert (m.precision, m.recall, m.specificity, m.fpr) == (1, 1, 1, 0)


def test_length_mismatch():
    with pytest.raises(ValueError):
        ev.confusion([0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        ev.confusion([0, 2], [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60).flatmap(lambda n: st.tuples(
    arrays(np.int8, n, elements=st.integers(0, 1)),
    arrays(np.int8, n, elements=st.integers(0, 1)), st.permutations(range(n)))))
def test_metrics_permutation_invariant(data):
    pred, truth, perm = data
    perm = np.array(perm)
    assert ev.confusion(pred, truth) == ev.confusion(pred[perm], truth[perm])
    c = ev.confusion(pred, truth)
    m = ev.metrics(c)
    if c.tp == 0:
        assert m.f1 == 0
    assert (m.f1 == 1) == (c.fp == 0 and c.fn == 0 and c.tp > 0)


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

def test_auc_examples():
    assert ev.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert ev.roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert ev.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_auc_single_class():
    with pytest.raises(ValueError):
        ev.roc_auc([0.1, 0.2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 500).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 1.0])
           | st.floats(0, 1)),
    arrays(np.int8, n, elements=st.integers(0, 1)))))
def test_auc_pair_counting(data):
    scores, truth = data
    if truth.min() == truth.max():
        return
    assert ev.roc_auc(scores, truth) == pytest.approx(pair_count_auc(scores, truth),
                                                      abs=1e-12)


# ---------------------------------------------------------------------------
# detection ratio
# ---------------------------------------------------------------------------

def test_detection_examples():
    starts = np.arange(0, 300, 10.0)
    flagged = (starts == 110).astype(int)
    assert ev.detection_ratio(flagged, starts, 10, [(100, 150)]).ratio == 1.0
    assert ev.detection_ratio(np.zeros(30, int), starts, 10, [(100, 150)]).ratio == 0.0
    events = [(20, 40), (100, 150), (200, 230)]
    flagged = np.isin(starts, [30, 210]).astype(int)
    det = ev.detection_ratio(flagged, starts, 10, events)
    assert (det.detected, det.total) == (2, 3)
    assert det.ratio == pytest.approx(0.6667, abs=1e-4)


def test_detection_needs_positive_overlap():
    # a segment that only touches the event boundary does not count
    det = ev.detection_ratio([1, 0], [90.0, 150.0], 10, [(100, 150)])
    assert det.detected == 0


def test_detection_without_events():
    det = ev.detection_ratio([1, 0], [0.0, 10.0], 10, [])
    assert not det.defined


@settings(max_examples=80, deadline=None)
@given(st.lists(st.booleans(), min_size=30, max_size=30), st.lists(st.booleans(),
                                                                  min_size=30, max_size=30))
def test_detection_monotone(a, extra):
    starts = np.arange(0, 300, 10.0)
    events = [(15, 42), (100, 150), (260, 275)]
    base = np.array(a, dtype=int)
    more = base | np.array(extra, dtype=int)
    assert (ev.detection_ratio(more, starts, 10, events).ratio
            >= ev.detection_ratio(base, starts, 10, events).ratio)


# ---------------------------------------------------------------------------
# aggregation and reports
# ---------------------------------------------------------------------------

def _row(**kw):
    base = {k: 0.5 for k in ev.METRICS}
    base.update(kw)
    return base


def test_aggregate_idempotent():
    run = {"a": _row(f1=0.2), "b": _row(f1=0.4, auc=None)}
    rep = ev.aggregate([run, run, run])
    assert rep.per_patient["a"] == pytest.approx(run["a"])
    assert rep.aggregate["f1"] == pytest.approx(0.3)
    assert rep.aggregate["auc"] == pytest.approx(0.5)


def test_aggregate_mismatched_patients():
    with pytest.raises(ValueError, match="same patients"):
        ev.aggregate([{"a": _row()}, {"b": _row()}])


def test_table_a2_mean_line():
    rep = ev.aggregate([table_a2_run()])
    agg = rep.aggregate
    P, R, S, F, A, D = TABLE_A2_MEAN
    assert abs(100 * agg["precision"] - P) <= 0.005 + 1e-9
    assert abs(100 * agg["recall"] - R) <= 0.005 + 1e-9
    assert abs(100 * agg["specificity"] - S) <= 0.005 + 1e-9
    assert abs(agg["f1"] - F) <= 0.0005 + 1e-9
    assert abs(agg["auc"] - A) <= 0.0005 + 1e-9
    assert abs(agg["detection_ratio"] - D) <= 0.0005 + 1e-9
    text = rep.to_text()
    assert "28.70" in text.splitlines()[-1]


def test_report_json_round_trip():
    rep = ev.aggregate([table_a2_run()], "x")
    back = json.loads(rep.to_json())
    assert back["aggregate"]["f1"] == pytest.approx(rep.aggregate["f1"])
    assert set(back["per_patient"]) == set(TABLE_A2)


def test_segment_report_auc_none_single_class():
    row = ev.segment_report([0, 1], [0, 0], scores=[0.1, 0.9])
    assert row["auc"] is None and row["counts"]["fp"] == 1


# ---------------------------------------------------------------------------
# Wilcoxon
# ---------------------------------------------------------------------------

def test_wilcoxon_zero_differences():
    with pytest.raises(ValueError):
        ev.wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])


def test_wilcoxon_all_positive_n5():
    stat, p = ev.wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1])
    assert stat == 0 and p == pytest.approx(2 / 2 ** 5)


@pytest.mark.parametrize("seed", range(12))
def test_wilcoxon_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 13))
    a = np.round(rng.normal(0, 1, n), 1)
    b = np.round(rng.normal(0.3, 1, n), 1)
    if np.count_nonzero(a - b) < 5:
        b = b + 0.05
    stat, p = ev.wilcoxon_signed_rank(a, b)
    o_stat, o_p = enumerate_wilcoxon(list(a), list(b))
    assert stat == o_stat
    assert p == pytest.approx(o_p, abs=1e-12)


def test_wilcoxon_normal_approximation():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    a, b = rng.normal(0, 1, 40), rng.normal(0.4, 1, 40)
    stat, p = ev.wilcoxon_signed_rank(a, b)
    ref = scipy_stats.wilcoxon(a, b, method="approx", correction=False)
    assert stat == pytest.approx(ref.statistic)
    assert p == pytest.approx(ref.pvalue, rel=1e-9)
