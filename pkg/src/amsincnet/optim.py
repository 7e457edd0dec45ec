"""RMSprop over parameter/gradient registries (uncentered, no momentum)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndarr import NonFiniteError, ShapeError
from .signal import ConfigError


@dataclass
class OptimConfig:
    lr: float = 0.001
    alpha: float = 0.95
    eps: float = 1e-7

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")


@dataclass
class OptimState:
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, 0)


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: OptimState, cfg: OptimConfig) -> None:
    """In-place update: ``v = a v + (1-a) g^2``, ``theta -= lr g / (sqrt(v) + eps)``.

    All gradients are validated before any parameter is touched, so a rejected
    step leaves params and state unchanged.
    """
    if params.keys() != grads.keys() or params.keys() != state.v.keys():
        missing = set(params) ^ set(grads) | set(params) ^ set(state.v)
        raise ShapeError(f"rmsprop_step: registry keys differ: {sorted(missing)}")
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.v[k].shape != p.shape:
            raise ShapeError(f"rmsprop_step: {k}: param {p.shape}, grad {g.shape}, state {state.v[k].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"rmsprop_step: non-finite gradient for {k!r} "
                                 f"({int(g.size - np.isfinite(g).sum())} of {g.size} entries); step aborted")
    a = cfg.alpha
    for k, p in params.items():
        g = grads[k]
        v = state.v[k]
        v *= a
        v += (1.0 - a) * g * g
        p -= cfg.lr * g / (np.sqrt(v) + cfg.eps)
    state.step += 1
