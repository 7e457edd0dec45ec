"""Central finite-difference checks for every differentiable component.

Each check returns the worst relative error ``||a - n|| / max(||a||, ||n||)``
over the tensors it inspects (0 when both gradients vanish).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ndarr
from .loss import (
    AM_SOFTMAX,
    SOFTMAX,
    LossConfig,
    am_softmax,
    compute_loss,
    l2_normalize_backward,
    l2_normalize_rows,
    softmax_ce,
)
from .network import (
    ModelConfig,
    init_model,
    layernorm_backward,
    layernorm_forward,
    leaky_relu,
    leaky_relu_backward,
    model_backward,
    model_forward,
)
from .sincbank import SincParams, sinc_backward, sinc_forward


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-300) * lo, x)


def check_ndarr(rng: np.random.Generator, size: str = "tiny") -> float:
    b, c, t, o, l = (2, 2, 11, 3, 3) if size == "tiny" else (3, 3, 40, 4, 7)
    worst = 0.0
    for stride in (1, 2):
        x = rng.standard_normal((b, c, t))
        k = rng.standard_normal((o, c, l))
        gy = rng.standard_normal(ndarr.conv1d_forward(x, k, stride).shape)
        f = lambda: float((ndarr.conv1d_forward(x, k, stride) * gy).sum())
        gx, gk = ndarr.conv1d_backward(gy, x, k, stride)
        worst = max(worst, rel_error(gx, numeric_grad(f, x)), rel_error(gk, numeric_grad(f, k)))
    # FFT path with a long kernel
    x = rng.standard_normal((2, 2, 60))
    k = rng.standard_normal((2, 2, ndarr.FFT_MIN_KERNEL + 1))
    gy = rng.standard_normal(ndarr.conv1d_forward(x, k).shape)
    f = lambda: float((ndarr.conv1d_forward(x, k) * gy).sum())
    gx, gk = ndarr.conv1d_backward(gy, x, k)
    worst = max(worst, rel_error(gx, numeric_grad(f, x)), rel_error(gk, numeric_grad(f, k)))
    # max pool on distinct values (no ties within 2h)
    x = rng.permutation(np.arange(2 * 3 * 12, dtype=np.float64)).reshape(2, 3, 12) * 0.1
    y, idx = ndarr.maxpool1d(x, 3)
    gy = rng.standard_normal(y.shape)
    f = lambda: float((ndarr.maxpool1d(x, 3)[0] * gy).sum())
    worst = max(worst, rel_error(ndarr.maxpool1d_backward(gy, idx, x.shape[-1]), numeric_grad(f, x)))
    return worst


def check_sincbank(rng: np.random.Generator, size: str = "tiny") -> float:
    b, t, nf, l = (2, 64, 3, 17) if size == "tiny" else (3, 200, 6, 51)
    sign = rng.choice([-1.0, 1.0], size=nf)
    p = SincParams(sign * rng.uniform(0.01, 0.2, nf), rng.choice([-1.0, 1.0], nf) * rng.uniform(0.01, 0.15, nf),
                   sample_rate=16000, filter_len=l)
    x = rng.standard_normal((b, 1, t))
    y, cache = sinc_forward(x, p)
    gy = rng.standard_normal(y.shape)
    f = lambda: float((sinc_forward(x, p)[0] * gy).sum())
    gx, g1, gb = sinc_backward(gy, cache, p)
    return max(rel_error(g1, numeric_grad(f, p.f1_raw, 1e-7)), rel_error(gb, numeric_grad(f, p.band_raw, 1e-7)),
               rel_error(gx, numeric_grad(f, x)))


def check_network_layers(rng: np.random.Generator, size: str = "tiny") -> float:
    shape = (3, 2, 5) if size == "tiny" else (4, 3, 12)
    x = rng.standard_normal(shape)
    gain = rng.standard_normal(shape[1:])
    bias = rng.standard_normal(shape[1:])
    y, cache = layernorm_forward(x, gain, bias)
    gy = rng.standard_normal(y.shape)
    f = lambda: float((layernorm_forward(x, gain, bias)[0] * gy).sum())
    gx, gg, gbias = layernorm_backward(gy, cache)
    worst = max(rel_error(gx, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, gain)),
                rel_error(gbias, numeric_grad(f, bias)))
    z = _away_from_zero(rng, shape)
    f = lambda: float((leaky_relu(z, 0.2) * gy).sum())
    worst = max(worst, rel_error(leaky_relu_backward(gy, z, 0.2), numeric_grad(f, z)))
    return worst


def check_loss(rng: np.random.Generator, size: str = "tiny") -> float:
    n, d, c = (4, 5, 3) if size == "tiny" else (8, 16, 10)
    worst = 0.0
    x = rng.standard_normal((n, d))
    gy = rng.standard_normal((n, d))
    xh, norms = l2_normalize_rows(x)
    f = lambda: float((l2_normalize_rows(x)[0] * gy).sum())
    worst = max(worst, rel_error(l2_normalize_backward(gy, xh, norms), numeric_grad(f, x)))
    labels = rng.integers(0, c, size=n)
    for cfg in (LossConfig(AM_SOFTMAX, s=30.0, m=0.35), LossConfig(AM_SOFTMAX, s=5.0, m=0.8),
                LossConfig(SOFTMAX), LossConfig(SOFTMAX, normalize_baseline=True)):
        emb = rng.standard_normal((n, d))
        w = rng.standard_normal((c, d))
        head = am_softmax if cfg.kind == AM_SOFTMAX else softmax_ce
        out = head(emb, w, labels, cfg)
        f = lambda: head(emb, w, labels, cfg).loss
        worst = max(worst, rel_error(out.grad_embeddings, numeric_grad(f, emb)),
                    rel_error(out.grad_W, numeric_grad(f, w)))
    return worst


def check_model(rng: np.random.Generator, size: str = "tiny", per_param: dict | None = None) -> float:
    """Whole network plus both heads; every parameter tensor is checked."""
    if size == "tiny":
        cfg = ModelConfig.tiny()
        batch = 4
    else:
        cfg = ModelConfig.tiny(frame_len=800, sinc_filters=4, sinc_len=33, conv_filters=(3, 3), dense=(12, 12, 12),
                               num_speakers=4)
        batch = 6
    worst = 0.0
    for loss_cfg in (LossConfig(AM_SOFTMAX, s=30.0, m=0.5), LossConfig(SOFTMAX)):
        model = init_model(cfg, int(rng.integers(1 << 31)))
        # move biases and norm affines off their trivial init so their gradients are exercised
        for k, v in model.params.items():
            if "norm" in k or k.endswith(".bias"):
                v += 0.1 * rng.standard_normal(v.shape)
        # mel init puts the top cutoff exactly on the Nyquist clamp; finite
        # differences need raws clear of both the clamp and the |.| kink
        nf = cfg.sinc_filters
        model.params["sinc.f1_raw"][:] = rng.choice([-1.0, 1.0], nf) * rng.uniform(0.01, 0.2, nf)
        model.params["sinc.band_raw"][:] = rng.choice([-1.0, 1.0], nf) * rng.uniform(0.01, 0.15, nf)
        x = rng.standard_normal((batch, cfg.frame_len))
        y = rng.integers(0, cfg.num_speakers, size=batch)

        def f():
            emb, _ = model_forward(model, x)
            return compute_loss(emb, model.classifier, y, loss_cfg).loss

        emb, cache = model_forward(model, x)
        out = compute_loss(emb, model.classifier, y, loss_cfg)
        grads = model_backward(model, out.grad_embeddings, cache, out.grad_W)
        for k, v in model.params.items():
            h = 1e-7 if k.startswith("sinc.") else 1e-6
            err = rel_error(grads[k], numeric_grad(f, v, h))
            if per_param is not None:
                key = f"{loss_cfg.kind}:{k}"
                per_param[key] = max(per_param.get(key, 0.0), err)
            worst = max(worst, err)
    return worst


CHECKS = {
    "ndarr": check_ndarr,
    "sincbank": check_sincbank,
    "network": check_network_layers,
    "loss": check_loss,
    "model": check_model,
}


def run_suite(size: str = "tiny", seed: int = 0) -> dict[str, float]:
    """Worst relative error per module, each check with its own seeded stream."""
    if size not in ("tiny", "small"):
        raise ValueError(f"unknown gradcheck size {size!r}")
    return {name: fn(np.random.default_rng([seed, i]), size) for i, (name, fn) in enumerate(CHECKS.items())}
