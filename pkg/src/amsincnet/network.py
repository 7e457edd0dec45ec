"""Network body: input norm, sinc front end, conv stack, dense stack.

Parameters live in a flat ordered registry ``name -> ndarray``.  Forward passes
return a cache consumed by :func:`model_backward`, which produces a gradient
registry with exactly the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndarr
from .ndarr import ShapeError
from .signal import ConfigError
from .sincbank import SincParams, mel_init, sinc_backward, sinc_forward

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    num_speakers: int = 462
    frame_len: int = 3200
    sample_rate: int = 16000
    sinc_filters: int = 80
    sinc_len: int = 251
    min_low_hz: float = 50.0
    min_band_hz: float = 50.0
    conv_filters: tuple[int, ...] = (60, 60)
    conv_kernels: tuple[int, ...] = (5, 5)
    pool: int = 3
    dense: tuple[int, ...] = (2048, 2048, 2048)
    leaky_slope: float = 0.2
    rectify: bool = True
    dropout: float = 0.0

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        base = dict(sinc_filters=16, sinc_len=101, conv_filters=(8, 8), conv_kernels=(5, 5), dense=(64, 64, 64))
        base.update(kw)
        return cls(**base)

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        base = dict(num_speakers=3, frame_len=400, sinc_filters=2, sinc_len=17,
                    conv_filters=(2, 2), conv_kernels=(5, 5), dense=(8, 8, 8))
        base.update(kw)
        return cls(**base)

    def __post_init__(self):
        self.conv_filters = tuple(int(v) for v in self.conv_filters)
        self.conv_kernels = tuple(int(v) for v in self.conv_kernels)
        self.dense = tuple(int(v) for v in self.dense)
        if len(self.conv_filters) != len(self.conv_kernels):
            raise ConfigError("conv_filters and conv_kernels differ in length")
        counts = [self.num_speakers, self.frame_len, self.sample_rate, self.sinc_filters, self.sinc_len, self.pool,
                  *self.conv_filters, *self.conv_kernels, *self.dense]
        if min(counts) <= 0 or not self.dense:
            raise ConfigError("all layer extents must be positive and at least one dense layer is required")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        self.stage_lengths()

    @property
    def embed_dim(self) -> int:
        return self.dense[-1]

    def stage_lengths(self) -> list[int]:
        """Time extent after each conv block (sinc block first)."""
        t = self.frame_len
        out = []
        for name, k in [("sinc", self.sinc_len)] + [(f"conv{i}", k) for i, k in enumerate(self.conv_kernels)]:
            t = (t - k + 1) // self.pool
            if t <= 0:
                raise ConfigError(f"{name}: frame of {self.frame_len} samples collapses to length {t}")
            out.append(t)
        return out

    def flatten_size(self) -> int:
        channels = self.conv_filters[-1] if self.conv_filters else self.sinc_filters
        return channels * self.stage_lengths()[-1]


# ---------------------------------------------------------------------------
# Layer kernels


def layernorm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layernorm_backward(grad_y: np.ndarray, cache):
    xhat, inv, gain = cache
    axes = tuple(range(1, xhat.ndim))
    grad_gain = (grad_y * xhat).sum(axis=0)
    grad_bias = grad_y.sum(axis=0)
    dxhat = grad_y * gain
    grad_x = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
    return grad_x, grad_gain, grad_bias


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(grad_y: np.ndarray, x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, grad_y, slope * grad_y)


def glorot_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot init for dense ``[out, in]`` or conv ``[out, in, k]`` weights."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 3:
        fan_out, fan_in = shape[0] * shape[2], shape[1] * shape[2]
    else:
        raise ShapeError(f"glorot_init: unsupported rank {len(shape)} for shape {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# Model


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def sinc_params(self) -> SincParams:
        c = self.config
        return SincParams(self.params["sinc.f1_raw"], self.params["sinc.band_raw"], c.sample_rate,
                          c.sinc_len, c.min_low_hz, c.min_band_hz)

    @property
    def classifier(self) -> np.ndarray:
        return self.params["classifier.weight"]

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(cfg: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng([seed, 1])
    p: dict[str, np.ndarray] = {}
    t_stages = cfg.stage_lengths()
    p["input_norm.gain"] = np.ones(cfg.frame_len)
    p["input_norm.bias"] = np.zeros(cfg.frame_len)
    sinc = mel_init(cfg.sinc_filters, cfg.sample_rate, cfg.sinc_len, cfg.min_low_hz, cfg.min_band_hz)
    p["sinc.f1_raw"] = sinc.f1_raw
    p["sinc.band_raw"] = sinc.band_raw
    p["sinc_norm.gain"] = np.ones((cfg.sinc_filters, t_stages[0]))
    p["sinc_norm.bias"] = np.zeros((cfg.sinc_filters, t_stages[0]))
    cin = cfg.sinc_filters
    for i, (cout, k) in enumerate(zip(cfg.conv_filters, cfg.conv_kernels)):
        p[f"conv{i}.weight"] = glorot_init((cout, cin, k), rng)
        p[f"conv{i}.bias"] = np.zeros(cout)
        p[f"conv{i}_norm.gain"] = np.ones((cout, t_stages[i + 1]))
        p[f"conv{i}_norm.bias"] = np.zeros((cout, t_stages[i + 1]))
        cin = cout
    din = cfg.flatten_size()
    for i, dout in enumerate(cfg.dense):
        p[f"dense{i}.weight"] = glorot_init((dout, din), rng)
        p[f"dense{i}.bias"] = np.zeros(dout)
        p[f"dense{i}_norm.gain"] = np.ones(dout)
        p[f"dense{i}_norm.bias"] = np.zeros(dout)
        din = dout
    p["classifier.weight"] = glorot_init((cfg.num_speakers, cfg.embed_dim), rng)
    return Model(cfg, p)


@dataclass
class ForwardCache:
    batch: int
    steps: list = field(default_factory=list)


def model_forward(m: Model, frames: np.ndarray, train_rng: np.random.Generator | None = None):
    """Frames ``[B, T]`` to embeddings ``[B, D]``.

    ``train_rng`` enables dropout (when configured); evaluation passes None.
    """
    c = m.config
    p = m.params
    x = ndarr.asarray(frames)
    if x.ndim != 2 or x.shape[1] != c.frame_len:
        raise ShapeError(f"input: expected frames [B, {c.frame_len}], got {x.shape}")
    cache = ForwardCache(x.shape[0])
    st = cache.steps

    x, ln = layernorm_forward(x, p["input_norm.gain"], p["input_norm.bias"])
    st.append(("ln", "input_norm", ln))
    sp = m.sinc_params()
    x, sc = sinc_forward(x[:, None, :], sp)
    st.append(("sinc", "sinc", sc))
    if c.rectify:
        st.append(("abs", None, np.sign(x)))
        x = np.abs(x)
    x = _block_tail(x, "sinc_norm", c, p, st)
    for i in range(len(c.conv_filters)):
        w = p[f"conv{i}.weight"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv{i}: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
        y = ndarr.conv1d_forward(x, w, 1) + p[f"conv{i}.bias"][None, :, None]
        st.append(("conv", f"conv{i}", x))
        x = _block_tail(y, f"conv{i}_norm", c, p, st)
    st.append(("flatten", None, x.shape))
    x = x.reshape(x.shape[0], -1)
    for i in range(len(c.dense)):
        w = p[f"dense{i}.weight"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"dense{i}: input width {x.shape[1]}, weight expects {w.shape[1]}")
        st.append(("dense", f"dense{i}", x))
        x = x @ w.T + p[f"dense{i}.bias"]
        x, ln = layernorm_forward(x, p[f"dense{i}_norm.gain"], p[f"dense{i}_norm.bias"])
        st.append(("ln", f"dense{i}_norm", ln))
        st.append(("leaky", None, x))
        x = leaky_relu(x, c.leaky_slope)
        if c.dropout > 0 and train_rng is not None:
            keep = (train_rng.random(x.shape) >= c.dropout) / (1.0 - c.dropout)
            st.append(("dropout", None, keep))
            x = x * keep
    return ndarr.check_finite(x, "model_forward"), cache


def _block_tail(x, norm_name, c, p, st):
    if c.pool > 1:
        t_in = x.shape[-1]
        x, idx = ndarr.maxpool1d(x, c.pool)
        st.append(("pool", None, (idx, t_in)))
    gain = p[f"{norm_name}.gain"]
    if x.shape[1:] != gain.shape:
        raise ShapeError(f"{norm_name}: activation {x.shape[1:]} vs norm parameters {gain.shape}")
    x, ln = layernorm_forward(x, gain, p[f"{norm_name}.bias"])
    st.append(("ln", norm_name, ln))
    st.append(("leaky", None, x))
    return leaky_relu(x, c.leaky_slope)


def model_backward(m: Model, grad_embeddings: np.ndarray, cache: ForwardCache,
                   grad_classifier: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Backpropagate into a gradient registry keyed like ``m.params``."""
    c = m.config
    p = m.params
    g = ndarr.asarray(grad_embeddings)
    if g.shape != (cache.batch, c.embed_dim):
        raise ShapeError(
            f"model_backward: gradient {g.shape} does not match cache batch {cache.batch}, dim {c.embed_dim}"
        )
    grads: dict[str, np.ndarray] = {}
    for kind, name, data in reversed(cache.steps):
        if kind == "dropout":
            g = g * data
        elif kind == "leaky":
            g = leaky_relu_backward(g, data, c.leaky_slope)
        elif kind == "ln":
            g, grads[f"{name}.gain"], grads[f"{name}.bias"] = layernorm_backward(g, data)
        elif kind == "dense":
            grads[f"{name}.weight"] = g.T @ data
            grads[f"{name}.bias"] = g.sum(axis=0)
            g = g @ p[f"{name}.weight"]
        elif kind == "flatten":
            g = g.reshape(data)
        elif kind == "pool":
            idx, t_in = data
            g = ndarr.maxpool1d_backward(g, idx, t_in)
        elif kind == "conv":
            grads[f"{name}.bias"] = g.sum(axis=(0, 2))
            g, grads[f"{name}.weight"] = ndarr.conv1d_backward(g, data, p[f"{name}.weight"], 1)
        elif kind == "abs":
            g = g * data
        elif kind == "sinc":
            g, grads["sinc.f1_raw"], grads["sinc.band_raw"] = sinc_backward(g, data, m.sinc_params())
            g = g[:, 0, :]
    if grad_classifier is None:
        grad_classifier = np.zeros_like(p["classifier.weight"])
    grads["classifier.weight"] = ndarr.asarray(grad_classifier)
    if grads.keys() != p.keys():
        raise ShapeError(f"model_backward: cache/model mismatch, keys differ: {sorted(set(grads) ^ set(p))}")
    for k, v in grads.items():
        ndarr.check_finite(v, f"model_backward[{k}]")
    return {k: grads[k] for k in p}
