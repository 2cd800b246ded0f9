"""Multiresolution EEGWaveNet: per-resolution conv/feature branches and a predictor."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

N_SCALES = 6
ST_WIDTH = 32  # spatio-temporal block channels
HIDDEN = 64


class ConfigError(ValueError):
    pass


def _floor_ratio(w: float, d: float) -> int:
    return int(math.floor(w / d + 1e-9))


@dataclass
class ModelConfig:
    window_sec: float = 10.0
    resolutions: list[float] = field(default_factory=lambda: [10.0, 2.0])
    feature_width: int = 32
    channels: int = 19
    sample_rate: float = 500.0
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.resolutions = [float(d) for d in self.resolutions]

    def validate(self) -> None:
        D = self.resolutions
        if not D:
            raise ConfigError("resolution list is empty")
        if abs(max(D) - self.window_sec) > 1e-9:
            raise ConfigError(f"max(D)={max(D)} must equal W={self.window_sec}")
        if any(a <= b for a, b in zip(D, D[1:])):
            raise ConfigError(f"resolutions must be strictly descending, got {D}")
        if self.feature_width < 1 or self.channels < 1:
            raise ConfigError("feature_width and channels must be >= 1")
        for d in D:
            n = d * self.sample_rate
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"d={d} s is not a whole number of samples")
            if scale_lengths(int(round(n)))[-1] < 7:
                raise ConfigError(f"d={d} s at {self.sample_rate} Hz is too short for the "
                                  f"deepest scale (needs >= 7 samples after 6 halvings)")

    @property
    def n_samples(self) -> int:
        return int(round(self.window_sec * self.sample_rate))

    def to_dict(self) -> dict:
        return asdict(self)


def feature_length(config: ModelConfig) -> int:
    """K = sum over d in D of F * floor(W / d)."""
    return sum(config.feature_width * _floor_ratio(config.window_sec, d)
               for d in config.resolutions)


def scale_lengths(L: int) -> list[int]:
    out = []
    for _ in range(N_SCALES):
        L = (L - 2) // 2 + 1 if L >= 2 else 0
        out.append(L)
    return out


class SpatioTemporalBlock(nn.Sequential):
    """Two [conv k=4 -> batch norm -> leaky relu] stages then global average pooling."""

    def __init__(self, cin, slope, rng, dtype):
        # conv biases are omitted: the following batch norm cancels them
        super().__init__(
            nn.Conv1d(cin, ST_WIDTH, 4, bias=False, rng=rng, dtype=dtype),
            nn.BatchNorm1d(ST_WIDTH, dtype=dtype), nn.LeakyReLU(slope),
            nn.Conv1d(ST_WIDTH, ST_WIDTH, 4, bias=False, rng=rng, dtype=dtype),
            nn.BatchNorm1d(ST_WIDTH, dtype=dtype), nn.LeakyReLU(slope),
            nn.GlobalAvgPool())


class Branch:
    """Convolution and feature-extraction modules for one resolution."""

    def __init__(self, channels, feature_width, slope, rng, dtype):
        self.channels = channels
        self.temporal = [nn.Conv1d(channels, channels, 2, stride=2, groups=channels,
                                   bias=False, rng=rng, dtype=dtype)
                         for _ in range(N_SCALES)]
        # scale 1 is not pooled, only scales 2..6 feed feature blocks
        self.blocks = [SpatioTemporalBlock(channels, slope, rng, dtype)
                       for _ in range(N_SCALES - 1)]
        self.head = nn.Sequential(
            nn.Linear((N_SCALES - 1) * ST_WIDTH, HIDDEN, rng=rng, dtype=dtype),
            nn.LeakyReLU(slope),
            nn.Linear(HIDDEN, feature_width, rng=rng, dtype=dtype), nn.Sigmoid())

    def named_layers(self, prefix=""):
        for i, conv in enumerate(self.temporal):
            yield f"{prefix}temporal{i}", conv
        for i, block in enumerate(self.blocks):
            yield from block.named_layers(f"{prefix}block{i}.")
        yield from self.head.named_layers(f"{prefix}head.")

    def multiscale(self, x, train=False):
        if scale_lengths(x.shape[-1])[-1] < 7:
            raise nn.ShapeError(f"input length {x.shape[-1]} too short for six halvings")
        outs = []
        for conv in self.temporal:
            x = conv.forward(x, train)
            outs.append(x)
        return outs

    def forward(self, x, train=False):
        scales = self.multiscale(x, train)
        self._n_scales = [s.shape for s in scales]
        pooled = [blk.forward(s, train) for blk, s in zip(self.blocks, scales[1:])]
        return self.head.forward(np.concatenate(pooled, axis=1), train)

    def backward(self, dy):
        dcat = self.head.backward(dy)
        dscales = [None] * N_SCALES
        for i, blk in enumerate(self.blocks):
            dscales[i + 1] = blk.backward(dcat[:, i * ST_WIDTH:(i + 1) * ST_WIDTH])
        # temporal chain: scale k feeds scale k+1 and its own block
        dx = np.zeros(self._n_scales[-1], dtype=dy.dtype)
        for k in range(N_SCALES - 1, -1, -1):
            if dscales[k] is not None:
                dx = dx + dscales[k]
            dx = self.temporal[k].backward(dx)
        return dx


class MREEGWaveNet:
    def __init__(self, config: ModelConfig, seed=0, dtype=np.float64):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        F, C, s = config.feature_width, config.channels, config.leaky_slope
        self.branches = [Branch(C, F, s, rng, dtype) for _ in config.resolutions]
        K = feature_length(config)
        self.predictor = nn.Sequential(
            nn.Linear(K, HIDDEN, rng=rng, dtype=dtype), nn.LeakyReLU(s),
            nn.Linear(HIDDEN, 32, rng=rng, dtype=dtype), nn.Sigmoid(),
            nn.Linear(32, 2, rng=rng, dtype=dtype), nn.LogSoftmax())

    # -- parameter access -------------------------------------------------

    def named_layers(self):
        for i, br in enumerate(self.branches):
            yield from br.named_layers(f"branch{i}.")
        yield from self.predictor.named_layers("predictor.")

    def parameters(self) -> dict[str, np.ndarray]:
        return nn.state_arrays(self.named_layers(), include_buffers=False)

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.named_layers():
            for key, g in layer.grads.items():
                out[f"{name}.{key}"] = g
        return out

    def state(self) -> dict[str, np.ndarray]:
        return nn.state_arrays(self.named_layers(), include_buffers=True)

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state()
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))[:3]
            extra = sorted(set(arrays) - set(own))[:3]
            raise ConfigError(f"parameter mismatch (missing {missing}, unexpected {extra})")
        for name, arr in arrays.items():
            if own[name].shape != arr.shape:
                raise ConfigError(f"{name}: shape {arr.shape} != {own[name].shape}")
            own[name][...] = arr

    # -- computation ------------------------------------------------------

    def _split(self, x, d):
        n_sub = _floor_ratio(self.config.window_sec, d)
        L = int(round(d * self.config.sample_rate))
        B, C, _ = x.shape
        sub = x[:, :, :n_sub * L].reshape(B, C, n_sub, L).transpose(0, 2, 1, 3)
        return np.ascontiguousarray(sub.reshape(B * n_sub, C, L)), n_sub

    def forward(self, x, train=False):
        """Return (log_probs (B, 2), features (B, K))."""
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.channels or x.shape[2] != cfg.n_samples:
            raise nn.ShapeError(f"expected (B, {cfg.channels}, {cfg.n_samples}) input, "
                                f"got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        B = x.shape[0]
        feats = []
        self._n_sub = []
        for d, br in zip(cfg.resolutions, self.branches):
            sub, n_sub = self._split(x, d)
            self._n_sub.append(n_sub)
            feats.append(br.forward(sub, train).reshape(B, n_sub * cfg.feature_width))
        features = np.concatenate(feats, axis=1)
        return self.predictor.forward(features, train), features

    def backward(self, dlog_probs, dfeatures=None):
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        cfg = self.config
        df = self.predictor.backward(dlog_probs)
        if dfeatures is not None:
            df = df + dfeatures
        B = df.shape[0]
        dx = np.zeros((B, cfg.channels, cfg.n_samples), dtype=df.dtype)
        pos = 0
        for d, br, n_sub in zip(cfg.resolutions, self.branches, self._n_sub):
            width = n_sub * cfg.feature_width
            dsub = br.backward(df[:, pos:pos + width].reshape(B * n_sub, cfg.feature_width))
            pos += width
            L = dsub.shape[-1]
            dx[:, :, :n_sub * L] += dsub.reshape(B, n_sub, cfg.channels, L).transpose(
                0, 2, 1, 3).reshape(B, cfg.channels, n_sub * L)
        return dx

    def loss_and_backward(self, x, y, class_weights, train=True):
        self.zero_grad()
        log_probs, _ = self.forward(x, train)
        loss, dlp = nn.weighted_nll_loss(log_probs, y, class_weights)
        self.backward(dlp)
        return loss


def multiscale_convolve(branch: Branch, segment):
    """The six temporal-convolution outputs of one branch."""
    return branch.multiscale(segment)


def spatiotemporal_features(block: SpatioTemporalBlock, scale_output, train=False):
    if scale_output.shape[-1] < 7:
        raise nn.ShapeError(f"scale length {scale_output.shape[-1]} < 7")
    return block.forward(scale_output, train)


def branch_features(branch: Branch, sub_segment, train=False):
    return branch.forward(sub_segment, train)


def forward(segment, config: ModelConfig, model: MREEGWaveNet, train=False):
    if model.config != config:
        raise ConfigError("model was built for a different configuration")
    return model.forward(segment, train)


def save_model(model: MREEGWaveNet, path) -> None:
    nn.save_checkpoint(path, model.state(), {"model": model.config.to_dict()})


def load_model(path, dtype=np.float32) -> MREEGWaveNet:
    header, arrays = nn.load_checkpoint(path)
    if "model" not in header:
        raise ConfigError(f"{path}: checkpoint carries no model configuration")
    model = MREEGWaveNet(ModelConfig(**header["model"]), dtype=dtype)
    model.load_state(arrays)
    return model
