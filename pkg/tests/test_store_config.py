import numpy as np
import pytest

from mrwavenet import store
from mrwavenet.config import ConfigFileError, load_config
from mrwavenet.dsp import Segment


def test_store_round_trip(tmp_path, rng):
    segs = [Segment("PN00-1", 10.0 * i, rng.standard_normal((3, 20)).astype(np.float32),
                    i % 2, "PN00") for i in range(4)]
    segs.append(Segment("PN01-ü", 2.5, np.zeros((3, 20), np.float32), 0, "PN01"))
    kinds = [store.TEST, store.ICTAL, store.INTERICTAL, store.TEST, store.TEST]
    store.write_store(tmp_path / "s.bin", segs, kinds, 3, 20, 256.0)
    back = store.read_store(tmp_path / "s.bin")
    assert (back.channels, back.n_samples, back.sample_rate) == (3, 20, 256.0)
    assert back.patients == ["PN00", "PN01"]
    for a, b in zip(segs, back.segments):
        assert (a.recording_id, a.start_sec, a.label, a.patient_id) == \
               (b.recording_id, b.start_sec, b.label, b.patient_id)
        np.testing.assert_array_equal(a.data, b.data)
    assert len(back.select(store.TEST)) == 3
    assert len(back.select(store.TEST, "PN01")) == 1


def test_store_header_layout(tmp_path):
    store.write_store(tmp_path / "s.bin", [], [], 19, 5000, 500.0)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"MRWNSEG1"
    assert np.frombuffer(raw[8:16], "<u4").tolist() == [19, 5000]
    assert np.frombuffer(raw[16:24], "<f8")[0] == 500.0
    assert np.frombuffer(raw[24:28], "<u4")[0] == 0


def test_store_rejects_shape_and_truncation(tmp_path):
    with pytest.raises(store.StoreError):
        store.write_store(tmp_path / "s.bin", [Segment("r", 0, np.zeros((2, 5)), 0)], [0],
                          3, 5, 1.0)
    store.write_store(tmp_path / "t.bin", [Segment("r", 0, np.zeros((2, 5)), 0)], [0],
                      2, 5, 1.0)
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-4])
    with pytest.raises(store.StoreError, match="truncated"):
        store.read_store(tmp_path / "t.bin")


def test_config_defaults(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nseed = 5\n")
    cfg = load_config(p)
    assert cfg.seed == 5 and cfg.training.seed == 5
    assert cfg.training.batch_size == 32 and cfg.training.class_weights == (0.75, 1.5)
    assert cfg.model.resolutions == [10.0, 2.0]
    assert [f.kind for f in cfg.preprocessing.filters] == ["bandpass_fir", "notch_iir"]
    assert cfg.resolve("out") == tmp_path / "out"


def test_config_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[training]\nclass_weights = 1, 2\npatience = 4\n"
                 "[preprocessing]\nnotch = off\ntarget_rate = 256\n"
                 "[postproc]\nscope = patient\n")
    cfg = load_config(p)
    assert cfg.training.class_weights == (1.0, 2.0) and cfg.training.patience == 4
    assert cfg.preprocessing.notch is None and cfg.preprocessing.target_rate == 256.0
    assert cfg.postproc.scope == "patient"


@pytest.mark.parametrize("text", [
    "[training]\npatience = soon\n",
    "[training]\nval_fraction = 0.9\n",
    "[postproc]\nscope = world\n",
    "[dataset]\nsource = edf\n",
    "[preprocessing]\nbandpass = maybe\n",
    "not an ini file",
])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigFileError):
        load_config(p)


def test_config_missing(tmp_path):
    with pytest.raises(ConfigFileError, match="not found"):
        load_config(tmp_path / "nope.ini")
