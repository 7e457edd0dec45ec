"""Classifier heads: additive-margin softmax and plain softmax cross-entropy.

Both return the batch-mean loss, gradients for the embeddings and the
classifier matrix, and margin-free posteriors used for frame error rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndarr
from .signal import ConfigError

SOFTMAX = "softmax"
AM_SOFTMAX = "am_softmax"
DEFAULT_MARGINS = tuple(round(0.35 + 0.05 * i, 2) for i in range(10))


@dataclass
class LossConfig:
    kind: str = AM_SOFTMAX
    s: float = 30.0
    m: float = 0.5
    eps_div: float = 1e-11
    eps_norm: float = 1e-12
    normalize_baseline: bool = False

    def __post_init__(self):
        if self.kind not in (SOFTMAX, AM_SOFTMAX):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.s <= 0:
            raise ConfigError(f"scale s must be positive, got {self.s}")
        if not 0.0 <= self.m < 1.0:
            raise ConfigError(f"margin m must be in [0, 1), got {self.m}")
        if self.eps_div <= 0 or self.eps_norm <= 0:
            raise ConfigError("eps values must be positive")


@dataclass
class LossOutput:
    loss: float
    grad_embeddings: np.ndarray
    grad_W: np.ndarray
    posteriors: np.ndarray
    per_sample: np.ndarray


def l2_normalize_rows(x: np.ndarray, eps_norm: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Rows divided by ``max(||row||, eps_norm)``; also returns the row norms."""
    x = ndarr.asarray(x)
    norms = np.sqrt((x * x).sum(axis=1))
    return x / np.maximum(norms, eps_norm)[:, None], norms


def l2_normalize_backward(grad_out: np.ndarray, xhat: np.ndarray, norms: np.ndarray, eps_norm: float = 1e-12):
    """Rows at or below the guard get a zero subgradient."""
    live = norms > eps_norm
    safe = np.where(live, norms, 1.0)
    proj = grad_out - xhat * (grad_out * xhat).sum(axis=1, keepdims=True)
    return np.where(live[:, None], proj / safe[:, None], 0.0)


def _check_labels(labels, n: int, c: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ndarr.ShapeError(f"{y.shape[0]} labels for {n} embeddings")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")
    return y


def _check_inputs(f, w):
    f = ndarr.asarray(f)
    w = ndarr.asarray(w)
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[1]:
        raise ndarr.ShapeError(f"embeddings {f.shape} and classifier {w.shape} are incompatible")
    ndarr.check_finite(f, "loss input embeddings")
    ndarr.check_finite(w, "loss input classifier")
    return f, w


def _ce_from_logits(z: np.ndarray, y: np.ndarray):
    """Per-sample CE and d(mean CE)/dz.

    Evaluated as ``softplus(lse_{j != y} z_j - z_y)`` so tiny losses keep their
    relative precision instead of rounding to zero.
    """
    n, c = z.shape
    rows = np.arange(n)
    target = z[rows, y]
    mask = np.ones_like(z, dtype=bool)
    mask[rows, y] = False
    if c > 1:
        d = ndarr.logsumexp_rows(z[mask].reshape(n, c - 1)) - target
        per = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    else:
        per = np.zeros(n)
    p = ndarr.softmax_rows(z)
    dz = p.copy()
    dz[rows, y] -= 1.0
    return per, dz / max(n, 1)


def am_softmax(f, W, labels, cfg: LossConfig | None = None) -> LossOutput:
    """Additive-margin softmax on cosine logits ``s * (cos - m * onehot)``."""
    cfg = cfg or LossConfig()
    f, W = _check_inputs(f, W)
    y = _check_labels(labels, f.shape[0], W.shape[0])
    fh, fn = l2_normalize_rows(f, cfg.eps_norm)
    wh, wn = l2_normalize_rows(W, cfg.eps_norm)
    cos = fh @ wh.T
    z = cfg.s * cos
    z[np.arange(len(y)), y] -= cfg.s * cfg.m
    per, dz = _ce_from_logits(z, y)
    dcos = cfg.s * dz
    grad_f = l2_normalize_backward(dcos @ wh, fh, fn, cfg.eps_norm)
    grad_w = l2_normalize_backward(dcos.T @ fh, wh, wn, cfg.eps_norm)
    post = ndarr.softmax_rows(cfg.s * cos)
    return LossOutput(float(per.mean()), grad_f, grad_w, post, per)


def am_softmax_naive(f, W, labels, s: float = 30.0, m: float = 0.5,
                     eps_div: float = 1e-11, eps_norm: float = 1e-12) -> float:
    """Literal exponential-ratio evaluation with an additive denominator guard.

    Kept as an independent reference for :func:`am_softmax`; not numerically
    safe for large ``s`` and many classes.
    """
    f = np.asarray(f, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    total = 0.0
    n, c = f.shape[0], W.shape[0]
    for i in range(n):
        fi = f[i] / max(np.sqrt(np.dot(f[i], f[i])), eps_norm)
        yi = int(labels[i])
        cos = [np.dot(W[j] / max(np.sqrt(np.dot(W[j], W[j])), eps_norm), fi) for j in range(c)]
        phi = np.exp(s * (cos[yi] - m))
        rest = sum(np.exp(s * cos[j]) for j in range(c) if j != yi)
        total += np.log(phi / (phi + rest + eps_div))
    return -total / n


def softmax_ce(f, W, labels, cfg: LossConfig | None = None) -> LossOutput:
    """Cross-entropy on raw logits ``f W^T`` (or ``s cos`` with normalize_baseline)."""
    cfg = cfg or LossConfig(kind=SOFTMAX)
    if cfg.normalize_baseline:
        return am_softmax(f, W, labels, LossConfig(AM_SOFTMAX, cfg.s, 0.0, cfg.eps_div, cfg.eps_norm))
    f, W = _check_inputs(f, W)
    y = _check_labels(labels, f.shape[0], W.shape[0])
    z = ndarr.matmul(f, W.T)
    per, dz = _ce_from_logits(z, y)
    return LossOutput(float(per.mean()), dz @ W, dz.T @ f, ndarr.softmax_rows(z), per)


def compute_loss(f, W, labels, cfg: LossConfig) -> LossOutput:
    if cfg.kind == SOFTMAX:
        return softmax_ce(f, W, labels, cfg)
    return am_softmax(f, W, labels, cfg)


def decision_margin_stat(f, W, labels, eps_norm: float = 1e-12) -> float:
    """Mean of (cosine to own class row - best cosine to any other row)."""
    f, W = _check_inputs(f, W)
    y = _check_labels(labels, f.shape[0], W.shape[0])
    if np.unique(y).size < 2:
        raise ValueError("decision_margin_stat needs at least two classes in the batch")
    cos = l2_normalize_rows(f, eps_norm)[0] @ l2_normalize_rows(W, eps_norm)[0].T
    rows = np.arange(len(y))
    own = cos[rows, y].copy()
    cos[rows, y] = -np.inf
    return float((own - cos.max(axis=1)).mean())
