"""Run configuration read from an INI file with one section per pipeline stage."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataio import SyntheticSpec
from .dsp import FilterSpec
from .training import TrainProtocol


class ConfigFileError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigFileError(f"not a boolean: {text!r}")


@dataclass
class DatasetSection:
    source: str = "synthetic"  # "synthetic" or "edf"
    edf_glob: str = ""
    annotations: str = ""
    channels: list[str] = field(default_factory=list)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class PreprocessSection:
    target_rate: float | None = None
    bandpass: FilterSpec | None = field(
        default_factory=lambda: FilterSpec("bandpass_fir", 1.0, 60.0, 2001))
    notch: FilterSpec | None = field(
        default_factory=lambda: FilterSpec("notch_iir", center_hz=50.0, q_factor=35.0))
    resample_first: bool = True

    @property
    def filters(self) -> list[FilterSpec]:
        return [f for f in (self.bandpass, self.notch) if f is not None]


@dataclass
class ModelSection:
    window_sec: float = 10.0
    resolutions: list[float] = field(default_factory=lambda: [10.0, 2.0])
    feature_width: int = 32
    leaky_slope: float = 0.01


@dataclass
class PostprocSection:
    ecod: bool = True
    representation: str = "features"  # "features" or "raw"
    scope: str = "session"  # "session", "patient" or "global"


@dataclass
class OutputSection:
    directory: Path = Path("out")
    export_scores: bool = True
    export_features: bool = True


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocessing: PreprocessSection = field(default_factory=PreprocessSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainProtocol = field(default_factory=TrainProtocol)
    postproc: PostprocSection = field(default_factory=PostprocSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    jobs: int = 1
    base_dir: Path = Path(".")

    def validate(self) -> None:
        ds = self.dataset
        if ds.source not in ("synthetic", "edf"):
            raise ConfigFileError(f"dataset.source must be synthetic or edf, got {ds.source!r}")
        if ds.source == "edf":
            if not ds.edf_glob:
                raise ConfigFileError("dataset.edf_glob is required for source = edf")
            if not ds.annotations:
                raise ConfigFileError("dataset.annotations is required for source = edf")
        if self.postproc.representation not in ("features", "raw"):
            raise ConfigFileError("postproc.representation must be features or raw")
        if self.postproc.scope not in ("session", "patient", "global"):
            raise ConfigFileError("postproc.scope must be session, patient or global")
        if self.jobs < 1:
            raise ConfigFileError("jobs must be >= 1")
        try:
            self.training.validate()
        except ValueError as exc:
            raise ConfigFileError(f"[training] {exc}") from None
        if self.model.window_sec <= 0 or not self.model.resolutions:
            raise ConfigFileError("[model] needs window_sec > 0 and a resolution list")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _get(sec, key, conv, default):
    if sec is None or key not in sec or sec[key].strip() == "":
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigFileError(f"[{sec.name}] {key}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: {exc}") from None
    sec = lambda name: cp[name] if cp.has_section(name) else None
    cfg = RunConfig(base_dir=path.parent)

    run = sec("run")
    cfg.seed = _get(run, "seed", int, 0)
    cfg.jobs = _get(run, "jobs", int, 1)

    d = sec("dataset")
    syn = SyntheticSpec()
    lo_hi = (_get(d, "seizure_len_min", float, syn.seizure_len_sec[0]),
             _get(d, "seizure_len_max", float, syn.seizure_len_sec[1]))
    try:
        synthetic = SyntheticSpec(
            n_patients=_get(d, "n_patients", int, syn.n_patients),
            duration_sec=_get(d, "duration_sec", float, syn.duration_sec),
            seizure_count=_get(d, "seizure_count", int, syn.seizure_count),
            seizure_len_sec=lo_hi,
            noise_amplitude=_get(d, "noise_amplitude", float, syn.noise_amplitude),
            burst_frequency=_get(d, "burst_frequency", float, syn.burst_frequency),
            seed=_get(d, "synthetic_seed", int, cfg.seed),
            n_channels=_get(d, "n_channels", int, syn.n_channels),
            sample_rate=_get(d, "sample_rate", float, syn.sample_rate))
    except ValueError as exc:
        raise ConfigFileError(f"[dataset] {exc}") from None
    cfg.dataset = DatasetSection(
        source=_get(d, "source", str.strip, "synthetic"),
        edf_glob=_get(d, "edf_glob", str.strip, ""),
        annotations=_get(d, "annotations", str.strip, ""),
        channels=_get(d, "channels", lambda s: [c.strip() for c in s.split(",") if c.strip()],
                      []),
        synthetic=synthetic)

    p = sec("preprocessing")
    bandpass = None
    if _get(p, "bandpass", _bool, True):
        bandpass = FilterSpec("bandpass_fir", _get(p, "bandpass_low", float, 1.0),
                              _get(p, "bandpass_high", float, 60.0),
                              _get(p, "num_taps", int, 2001))
    notch = None
    if _get(p, "notch", _bool, True):
        notch = FilterSpec("notch_iir", center_hz=_get(p, "notch_center", float, 50.0),
                           q_factor=_get(p, "notch_q", float, 35.0))
    cfg.preprocessing = PreprocessSection(_get(p, "target_rate", float, None), bandpass,
                                          notch, _get(p, "resample_first", _bool, True))

    m = sec("model")
    cfg.model = ModelSection(_get(m, "window_sec", float, 10.0),
                             _get(m, "resolutions", _floats, [10.0, 2.0]),
                             _get(m, "feature_width", int, 32),
                             _get(m, "leaky_slope", float, 0.01))

    t = sec("training")
    proto = TrainProtocol()
    kwargs = {}
    for f in fields(TrainProtocol):
        if f.name == "seed":
            continue
        default = getattr(proto, f.name)
        if f.name == "class_weights":
            kwargs[f.name] = tuple(_get(t, f.name, _floats, list(default)))
        else:
            kwargs[f.name] = _get(t, f.name, type(default), default)
    cfg.training = TrainProtocol(seed=cfg.seed, **kwargs)

    pp = sec("postproc")
    cfg.postproc = PostprocSection(_get(pp, "ecod", _bool, True),
                                   _get(pp, "representation", str.strip, "features"),
                                   _get(pp, "scope", str.strip, "session"))
    o = sec("output")
    cfg.output = OutputSection(Path(_get(o, "directory", str.strip, "out")),
                               _get(o, "export_scores", _bool, True),
                               _get(o, "export_features", _bool, True))
    cfg.validate()
    return cfg
