"""Minimal layer set with explicit forward/backward passes.

Every layer keeps what its backward pass needs from the last forward call.
Parameters live in ``layer.params`` and gradients accumulate into
``layer.grads`` under the same keys; non-trainable state (batch-norm running
statistics) lives in ``layer.buffers``.
"""
from __future__ import annotations

import io
import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# functional forms
# ---------------------------------------------------------------------------

def conv1d(x, weight, bias=None, stride=1, groups=1):
    """Grouped 1-D cross-correlation without padding. x: (B, Cin, L)."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (B, Cin, L), got {x.shape}")
    B, cin, L = x.shape
    cout, cin_g, k = weight.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"axis 1: weight expects {cin_g * groups} input channels, got {cin}")
    if L < k:
        raise ShapeError(f"axis 2: input length {L} shorter than kernel {k}")
    out = _kernels.conv1d_forward(x, weight, stride, groups)
    if bias is not None:
        out += bias[None, :, None]
    return out


def conv1d_backward(x, weight, dy, stride=1, groups=1, has_bias=True):
    dx, dw = _kernels.conv1d_backward(x, weight, dy, stride, groups)
    db = dy.sum(axis=(0, 2)) if has_bias else None
    return dx, dw, db


def leaky_relu(x, slope=0.01):
    return np.where(x >= 0, x, slope * x)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def global_avg_pool(x):
    if x.shape[-1] == 0:
        raise ShapeError("global_avg_pool over an empty temporal axis")
    return x.mean(axis=-1)


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} input features, got {x.shape[-1]}")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


def log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def weighted_nll_loss(log_probs, targets, class_weights):
    """Class-weighted mean negative log-likelihood and its gradient w.r.t. log_probs."""
    targets = np.asarray(targets)
    n_classes = log_probs.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError(f"targets must lie in [0, {n_classes})")
    w = np.asarray(class_weights, dtype=log_probs.dtype)[targets]
    rows = np.arange(len(targets))
    total = w.sum()
    loss = float(-(w * log_probs[rows, targets]).sum() / total)
    grad = np.zeros_like(log_probs)
    grad[rows, targets] = -w / total
    return loss, grad


def batchnorm1d(x, gamma, beta, running_mean, running_var, train, eps=1e-5, momentum=0.1):
    """Batch norm over (B, C, L) or (B, F). Updates running stats in place when training."""
    axes = (0, 2) if x.ndim == 3 else (0,)
    shape = (1, -1, 1) if x.ndim == 3 else (1, -1)
    if train:
        count = x.size // x.shape[1]
        if count < 2:
            raise ShapeError("batch norm in train mode needs at least two values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    return gamma.reshape(shape) * xhat + beta.reshape(shape), xhat, inv_std


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    def __init__(self, cin, cout, kernel, stride=1, groups=1, bias=True, rng=None,
                 dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.groups = stride, groups
        fan_in = cin // groups * kernel
        self.params["weight"] = _uniform(rng, fan_in, (cout, cin // groups, kernel), dtype)
        if bias:
            self.params["bias"] = _uniform(rng, fan_in, (cout,), dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        self._x = x
        return conv1d(x, self.params["weight"], self.params.get("bias"), self.stride,
                      self.groups)

    def backward(self, dy):
        dx, dw, db = conv1d_backward(self._x, self.params["weight"], dy, self.stride,
                                     self.groups, "bias" in self.params)
        self.grads["weight"] += dw
        if db is not None:
            self.grads["bias"] += db
        return dx


class BatchNorm1d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        # eval before any training step normalises with (0, 1)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        out, self._xhat, self._inv_std = batchnorm1d(
            x, self.params["gamma"], self.params["beta"], self.buffers["running_mean"],
            self.buffers["running_var"], train, self.eps, self.momentum)
        self._train = train
        return out

    def backward(self, dy):
        xhat, inv_std = self._xhat, self._inv_std
        axes = (0, 2) if dy.ndim == 3 else (0,)
        shape = (1, -1, 1) if dy.ndim == 3 else (1, -1)
        self.grads["gamma"] += (dy * xhat).sum(axis=axes)
        self.grads["beta"] += dy.sum(axis=axes)
        dxhat = dy * self.params["gamma"].reshape(shape)
        if not self._train:
            return dxhat * inv_std.reshape(shape)
        mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std.reshape(shape)


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope
        self.frozen = False

    def forward(self, x, train=False):
        if not (self.frozen and getattr(self, "_neg", None) is not None
                and self._neg.shape == x.shape):
            self._neg = x < 0
        return np.where(self._neg, self.slope * x, x)

    def backward(self, dy):
        return np.where(self._neg, self.slope * dy, dy)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1 - self._y)


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        self._L = x.shape[-1]
        return global_avg_pool(x)

    def backward(self, dy):
        return np.repeat(dy[..., None] / self._L, self._L, axis=-1)


class Linear(Layer):
    def __init__(self, fin, fout, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = _uniform(rng, fin, (fout, fin), dtype)
        self.params["bias"] = _uniform(rng, fin, (fout,), dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        self._x = x
        return linear(x, self.params["weight"], self.params["bias"])

    def backward(self, dy):
        self.grads["weight"] += dy.T @ self._x
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]


class LogSoftmax(Layer):
    def forward(self, x, train=False):
        self._y = log_softmax(x)
        return self._y

    def backward(self, dy):
        return dy - np.exp(self._y) * dy.sum(axis=1, keepdims=True)


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from _named(layer, f"{prefix}{i}")


def _named(layer, name):
    if isinstance(layer, Sequential):
        yield from layer.named_layers(name + ".")
    elif hasattr(layer, "named_layers"):
        yield from layer.named_layers(name + ".")
    else:
        yield name, layer


def state_arrays(named_layers, include_buffers=True):
    """Flat ``name -> array`` view of parameters (and buffers) in a fixed order."""
    out = {}
    for name, layer in named_layers:
        for key, arr in layer.params.items():
            out[f"{name}.{key}"] = arr
        if include_buffers:
            for key, arr in layer.buffers.items():
                out[f"{name}.{key}"] = arr
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@contextmanager
def frozen_kinks(named_layers):
    """Hold every LeakyReLU sign pattern fixed at its last forward pass.

    Central differences that straddle a kink measure the average of two
    slopes; with the pattern frozen they measure the derivative of the linear
    piece the probe point lies in, which is what backprop computes.
    """
    relus = [layer for _, layer in named_layers if isinstance(layer, LeakyReLU)]
    for layer in relus:
        layer.frozen = True
    try:
        yield
    finally:
        for layer in relus:
            layer.frozen = False


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_group: dict[str, float] = field(default_factory=dict)
    worst_group: str = ""
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def passes(self, rel_tol: float) -> bool:
        return self.ok and self.max_rel_error < rel_tol


def grad_check(loss_and_grads, params, h=1e-5, max_per_group=None, rng=None):
    """Compare analytic gradients with central differences.

    ``loss_and_grads()`` evaluates the loss at the current values of the
    arrays in ``params`` (perturbed in place) and returns ``(loss, grads)``
    with ``grads`` keyed like ``params``. For each group the relative error
    is ``max|a - n| / max(max|a|, max|n|, 1e-8)`` over the probed entries;
    ``max_per_group`` limits the number of probed entries per group.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    report = GradCheckReport(0.0)
    for name, arr in params.items():
        a_full = analytic[name]
        if not np.all(np.isfinite(a_full)):
            report.failures.append(f"{name}: non-finite analytic gradient")
            continue
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_group is not None and flat.size > max_per_group:
            idx = np.sort(rng.choice(flat.size, max_per_group, replace=False))
        a = a_full.reshape(-1)[idx]
        n = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_and_grads()
            flat[i] = orig - h
            lm, _ = loss_and_grads()
            flat[i] = orig
            n[j] = (lp - lm) / (2 * h)
        if not np.all(np.isfinite(n)):
            report.failures.append(f"{name}: non-finite numerical gradient")
            continue
        err = np.abs(a - n).max() / max(np.abs(a).max(), np.abs(n).max(), 1e-8)
        report.per_group[name] = float(err)
        if err >= report.max_rel_error:
            report.max_rel_error, report.worst_group = float(err), name
    return report


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MRWNCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], header: dict | None = None):
    """Magic, version, JSON header, layer manifest, then little-endian float32 data."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    meta = json.dumps(header or {}, sort_keys=True).encode()
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8
    version, meta_len = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        manifest.append((name, shape))
    arrays = {}
    for name, shape in manifest:
        n = int(np.prod(shape))
        if pos + 4 * n > len(data):
            raise CheckpointError(f"{path}: truncated at {name}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
    return header, arrays
