import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrwavenet import dsp
from mrwavenet.dataio import AnnotationSet, Recording
from oracles import biquad_gain_db, dtft_gain_db, rms

FS = 500.0


def tone(freq, fs=FS, seconds=10.0, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def rec_of(x, fs=FS):
    x = np.atleast_2d(x)
    return Recording("p", "s", [f"c{i}" for i in range(len(x))], fs, x)


@pytest.fixture(scope="module")
def bandpass():
    return dsp.design_bandpass(1.0, 60.0, FS, 2001)


# ---------------------------------------------------------------------------
# filter design
# ---------------------------------------------------------------------------

def test_bandpass_symmetric(bandpass):
    np.testing.assert_array_equal(bandpass, bandpass[::-1])


def test_bandpass_response(bandpass):
    assert abs(dtft_gain_db(bandpass, 30.0, FS)) <= 1.0
    assert dtft_gain_db(bandpass, 0.0, FS) <= -20.0
    assert dtft_gain_db(bandpass, 63.0, FS) <= -40.0


def test_fir_response_matches_loop(bandpass):
    for f in (0.5, 10.0, 55.0, 120.0):
        ours = 20 * np.log10(abs(dsp.fir_response(bandpass, f, FS)))
        assert ours == pytest.approx(dtft_gain_db(bandpass, f, FS), abs=1e-6)


def test_notch_response():
    b, a = dsp.design_notch(50.0, 35.0, FS)
    assert biquad_gain_db(b, a, 50.0, FS) <= -25.0
    assert abs(dsp.iir_response(b, a, 0.0, FS)) == pytest.approx(1.0, abs=1e-6)
    assert biquad_gain_db(b, a, 45.0, FS) >= -1.0


@pytest.mark.parametrize("spec", [
    dsp.FilterSpec("bandpass_fir", 60.0, 1.0),
    dsp.FilterSpec("bandpass_fir", 1.0, 300.0),
    dsp.FilterSpec("bandpass_fir", 1.0, 60.0, num_taps=2000),
    dsp.FilterSpec("notch_iir", center_hz=260.0),
    dsp.FilterSpec("notch_iir", q_factor=0.0),
    dsp.FilterSpec("lowpass"),
])
def test_filter_spec_rejects(spec):
    with pytest.raises(dsp.FilterDesignError):
        spec.validate(FS)


# ---------------------------------------------------------------------------
# zero-phase application
# ---------------------------------------------------------------------------

FILTERS = [dsp.FilterSpec("bandpass_fir", 1.0, 60.0, 2001),
           dsp.FilterSpec("notch_iir", center_hz=50.0, q_factor=35.0)]


def _interior(x, fs=FS, skip=2.0):
    k = int(skip * fs)
    return x[..., k:-k]


def test_50hz_removed():
    x = tone(50.0)
    y = dsp.apply_zero_phase(rec_of(x), FILTERS).samples[0]
    assert rms(_interior(y)) <= 0.05 * rms(_interior(x))


def test_10hz_passes_without_lag():
    x = tone(10.0, phase=0.3)
    y = dsp.apply_zero_phase(rec_of(x), FILTERS).samples[0]
    xi, yi = _interior(x), _interior(y)
    assert rms(yi) == pytest.approx(rms(xi), rel=0.05)
    lags = np.arange(-20, 21)
    xc = [np.dot(xi[20:-20], np.roll(yi, -lag)[20:-20]) for lag in lags]
    assert lags[int(np.argmax(xc))] == 0


def test_zero_in_zero_out():
    y = dsp.apply_zero_phase(rec_of(np.zeros((2, 5000))), FILTERS).samples
    assert not y.any()


def test_filter_linearity(rng):
    x = rng.standard_normal((2, 4000))
    z = rng.standard_normal((2, 4000))
    a, b = 1.7, -0.4
    f = lambda s: dsp.apply_zero_phase(rec_of(s), FILTERS).samples
    lhs, rhs = f(a * x + b * z), a * f(x) + b * f(z)
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


def test_filter_too_short():
    with pytest.raises(dsp.FilterDesignError):
        dsp.apply_zero_phase(rec_of(np.ones((1, 500))), FILTERS[:1])


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_resample_identity(rng):
    r = rec_of(rng.standard_normal((2, 1000)))
    np.testing.assert_array_equal(dsp.resample(r, FS).samples, r.samples)


def test_resample_length():
    out = dsp.resample(rec_of(np.zeros(512 * 10), fs=512.0), 500.0)
    assert out.n_samples == 5000 and out.sample_rate == 500.0


def test_resample_preserves_5hz():
    x = tone(5.0, fs=512.0, seconds=10.0)
    y = dsp.resample(rec_of(x, fs=512.0), 500.0).samples[0]
    yi = y[500:-500]
    t = (np.arange(len(y)) / 500.0)[500:-500]
    # least-squares fit of a 5 Hz sinusoid gives amplitude and frequency fidelity
    A = np.column_stack([np.sin(2 * np.pi * 5 * t), np.cos(2 * np.pi * 5 * t)])
    coef, *_ = np.linalg.lstsq(A, yi, rcond=None)
    assert np.hypot(*coef) == pytest.approx(1.0, rel=0.02)
    assert rms(yi - A @ coef) < 0.01
    spec = np.abs(np.fft.rfft(y))
    assert np.fft.rfftfreq(len(y), 1 / 500.0)[np.argmax(spec)] == pytest.approx(5.0)


def test_rational_ratio():
    assert dsp.rational_ratio(512, 500) == (125, 128)
    with pytest.raises(dsp.FilterDesignError):
        dsp.rational_ratio(1.0, 1.00001 + 1e-9)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def test_segment_count_from_duration():
    # 3.2 h at 500 Hz without materialising 5.76 M samples per channel twice
    rec = Recording("p", "s", ["a"], 500.0, np.zeros((1, int(3.2 * 3600 * 500))))
    assert len(dsp.segmentize(rec, None, 10.0)) == 1152


def test_seizure_labels():
    rec = rec_of(np.zeros((1, 300 * 10)), fs=10.0)
    segs = dsp.segmentize(rec, AnnotationSet("s", [(100, 150)]), 10.0)
    assert [s.start_sec for s in segs if s.label] == [100, 110, 120, 130, 140]


def test_oversampled_seizure_windows():
    rec = rec_of(np.zeros((1, 200 * 10)), fs=10.0)
    segs = dsp.segmentize(rec, AnnotationSet("s", [(50, 112)]), 10.0, 0.8, span=(50, 112))
    assert len(segs) == (62 - 10) // 2 + 1 == 27
    assert all(s.label == 1 for s in segs)


def test_window_must_be_whole_samples():
    with pytest.raises(dsp.SegmentationError):
        dsp.segmentize(rec_of(np.zeros((1, 1000)), fs=256.0), None, 0.3)


def test_segments_are_views():
    rec = rec_of(np.arange(100.0)[None], fs=10.0)
    seg = dsp.segmentize(rec, None, 2.0)[3]
    assert np.shares_memory(seg.data, rec.samples)
    np.testing.assert_array_equal(seg.data[0], np.arange(60.0, 80.0))


@settings(max_examples=60, deadline=None)
@given(duration=st.integers(10, 400), W=st.sampled_from([1.0, 2.0, 2.5, 5.0, 10.0]))
def test_segment_count_property(duration, W):
    fs = 4.0
    rec = Recording("p", "s", ["a"], fs, np.zeros((1, int(duration * fs))))
    if duration < W:
        return
    assert len(dsp.segmentize(rec, None, W)) == int(np.floor(duration / W))


@settings(max_examples=80, deadline=None)
@given(onset=st.floats(0, 80), length=st.floats(1, 60), grow_l=st.floats(0, 10),
       grow_r=st.floats(0, 10), start=st.floats(0, 140))
def test_labeling_monotone(onset, length, grow_l, grow_r, start):
    small = [(onset, onset + length)]
    big = [(max(0.0, onset - grow_l), onset + length + grow_r)]
    assert dsp.label_window(start, 10.0, big) >= dsp.label_window(start, 10.0, small)


def test_preprocess_order():
    x = np.vstack([tone(10.0, fs=512.0), tone(20.0, fs=512.0)])
    out = dsp.preprocess(rec_of(x, fs=512.0), FILTERS, 500.0)
    assert out.sample_rate == 500.0 and out.n_samples == 5000
    out2 = dsp.preprocess(rec_of(x, fs=512.0), FILTERS, 500.0, resample_first=False)
    assert rms(_interior(out.samples - out2.samples)) < 0.01
