"""Learnable sinc band-pass filter bank.

Each filter is a windowed difference of two sincs, parametrized only by a raw
low cutoff and a raw bandwidth (both in Hz / fs).  Raw values map to effective
cutoffs through ``|.|`` plus minimum-frequency offsets and a Nyquist clamp, so
any raw value yields a valid band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndarr
from .signal import ConfigError, mel, mel_inv

LOW_HZ = 30.0


@dataclass
class SincParams:
    f1_raw: np.ndarray
    band_raw: np.ndarray
    sample_rate: int = 16000
    filter_len: int = 251
    min_low_hz: float = 50.0
    min_band_hz: float = 50.0

    def __post_init__(self):
        self.f1_raw = np.asarray(self.f1_raw, dtype=np.float64).reshape(-1)
        self.band_raw = np.asarray(self.band_raw, dtype=np.float64).reshape(-1)
        if self.filter_len % 2 != 1 or self.filter_len < 1:
            raise ConfigError(f"filter length must be odd, got {self.filter_len}")
        if self.f1_raw.shape != self.band_raw.shape or self.f1_raw.size < 1:
            raise ConfigError("f1_raw and band_raw must be non-empty and equally sized")

    @property
    def num_filters(self) -> int:
        return self.f1_raw.size

    def num_parameters(self) -> int:
        return self.f1_raw.size + self.band_raw.size


def mel_init(num_filters: int, fs: int = 16000, filter_len: int = 251,
             min_low_hz: float = 50.0, min_band_hz: float = 50.0) -> SincParams:
    """Mel-spaced initialization.

    ``F + 1`` points equally spaced in mel between 30 Hz and
    ``fs/2 - (min_low + min_band)`` become the raw low cutoffs and raw
    bandwidths, so filter ``i`` covers
    ``[point_i + min_low, point_{i+1} + min_low + min_band]`` and the last
    filter ends at Nyquist.  All raw values are strictly positive, away from
    the ``|.|`` kink.
    """
    if num_filters < 1:
        raise ConfigError("need at least one filter")
    hi = fs / 2 - (min_low_hz + min_band_hz)
    if hi <= LOW_HZ:
        raise ConfigError(f"sample rate {fs} leaves no room for the filter bank")
    hz = mel_inv(np.linspace(mel(LOW_HZ), mel(hi), num_filters + 1))
    if np.min(np.diff(hz)) <= 0:
        raise ConfigError(f"{num_filters} filters collapse adjacent mel points")
    return SincParams(
        f1_raw=hz[:-1] / fs,
        band_raw=np.diff(hz) / fs,
        sample_rate=fs,
        filter_len=filter_len,
        min_low_hz=min_low_hz,
        min_band_hz=min_band_hz,
    )


@dataclass
class Cutoffs:
    f1: np.ndarray
    f2: np.ndarray
    f1_clamped: np.ndarray
    f2_clamped: np.ndarray


def _cutoffs(p: SincParams) -> Cutoffs:
    fs = p.sample_rate
    f1 = p.min_low_hz / fs + np.abs(p.f1_raw)
    f1_cap = 0.5 - p.min_band_hz / fs
    c1 = f1 > f1_cap
    f1 = np.where(c1, f1_cap, f1)
    f2 = f1 + p.min_band_hz / fs + np.abs(p.band_raw)
    c2 = f2 > 0.5
    f2 = np.where(c2, 0.5, f2)
    return Cutoffs(f1, f2, c1, c2)


def effective_cutoffs(p: SincParams) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (f1, f2) with ``min_low/fs <= f1 < f2 <= 0.5``."""
    c = _cutoffs(p)
    return c.f1, c.f2


def hamming(filter_len: int) -> np.ndarray:
    """Centered Hamming window ``0.54 + 0.46 cos(2 pi n / L)`` for n = -(L-1)/2..(L-1)/2."""
    n = np.arange(filter_len) - (filter_len - 1) // 2
    return 0.54 + 0.46 * np.cos(2 * np.pi * n / filter_len)


@dataclass
class FilterBank:
    taps: np.ndarray  # [F, 1, L]
    f1: np.ndarray
    f2: np.ndarray
    window: np.ndarray  # right half incl. center, [c+1]
    band_pass: np.ndarray  # unwindowed g[n] right half, [F, c+1]
    cos1: np.ndarray  # cos(2 pi f1 n), right half
    cos2: np.ndarray
    scale: np.ndarray  # 1 / (2 (f2 - f1)), 0 for an empty band


def sinc_taps(f1: np.ndarray, f2: np.ndarray, filter_len: int) -> FilterBank:
    """Build windowed, gain-normalized taps from normalized cutoffs.

    Only the right half (n >= 0) is evaluated; the left half is its mirror.
    """
    f1 = np.asarray(f1, dtype=np.float64).reshape(-1, 1)
    f2 = np.asarray(f2, dtype=np.float64).reshape(-1, 1)
    c = (filter_len - 1) // 2
    n = np.arange(1, c + 1, dtype=np.float64)
    g = np.empty((f1.shape[0], c + 1))
    g[:, 0] = 2.0 * (f2[:, 0] - f1[:, 0])
    g[:, 1:] = (np.sin(2 * np.pi * f2 * n) - np.sin(2 * np.pi * f1 * n)) / (np.pi * n)
    win = hamming(filter_len)[c:]
    band = 2.0 * (f2[:, 0] - f1[:, 0])
    scale = np.divide(1.0, band, out=np.zeros_like(band), where=band > 0)
    half = g * win * scale[:, None]
    taps = np.concatenate([half[:, :0:-1], half], axis=1)[:, None, :]
    nn = np.arange(c + 1, dtype=np.float64)
    return FilterBank(
        taps=ndarr.check_finite(taps, "sinc_taps"),
        f1=f1[:, 0],
        f2=f2[:, 0],
        window=win,
        band_pass=g,
        cos1=np.cos(2 * np.pi * f1 * nn),
        cos2=np.cos(2 * np.pi * f2 * nn),
        scale=scale,
    )


def sinc_taps_full(f1: np.ndarray, f2: np.ndarray, filter_len: int) -> np.ndarray:
    """Reference tap builder evaluating every index directly (no mirroring)."""
    f1 = np.asarray(f1, dtype=np.float64).reshape(-1)
    f2 = np.asarray(f2, dtype=np.float64).reshape(-1)
    c = (filter_len - 1) // 2
    win = hamming(filter_len)
    out = np.empty((f1.size, 1, filter_len))
    for i in range(f1.size):
        band = 2.0 * (f2[i] - f1[i])
        scale = 1.0 / band if band > 0 else 0.0
        for j in range(filter_len):
            k = abs(j - c)
            if k == 0:
                g = band
            else:
                n = np.float64(k)
                g = (np.sin(2 * np.pi * f2[i] * n) - np.sin(2 * np.pi * f1[i] * n)) / (np.pi * n)
            out[i, 0, j] = g * win[c + k] * scale
    return out


def build_filters(p: SincParams) -> FilterBank:
    f1, f2 = effective_cutoffs(p)
    return sinc_taps(f1, f2, p.filter_len)


@dataclass
class SincCache:
    x: np.ndarray
    bank: FilterBank
    cut: Cutoffs


def sinc_forward(x: np.ndarray, p: SincParams) -> tuple[np.ndarray, SincCache]:
    """Convolve ``x[B,1,T]`` with the filter bank (valid, stride 1)."""
    x = ndarr.asarray(x)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ndarr.ShapeError(f"sinc_forward: expected x[B,1,T], got {x.shape}")
    cut = _cutoffs(p)
    bank = sinc_taps(cut.f1, cut.f2, p.filter_len)
    y = ndarr.conv1d_forward(x, bank.taps, 1)
    return y, SincCache(x, bank, cut)


def taps_backward(grad_taps: np.ndarray, bank: FilterBank) -> tuple[np.ndarray, np.ndarray]:
    """Map dL/dtaps onto dL/df1 and dL/df2 (effective normalized cutoffs)."""
    gt = np.asarray(grad_taps).reshape(bank.f1.size, -1)
    c = bank.window.size - 1
    # fold mirrored taps onto the right half
    gh = gt[:, c:].copy()
    gh[:, 1:] += gt[:, c - 1 :: -1] if c > 0 else 0.0
    dg1 = -2.0 * bank.cos1
    dg2 = 2.0 * bank.cos2
    dg1[:, 0] = -2.0
    dg2[:, 0] = 2.0
    # taps = g * w * scale, scale = 1/(2 (f2 - f1))
    gw = gh * bank.window
    d_g = gw * bank.scale[:, None]
    d_scale = (gw * bank.band_pass).sum(axis=1)
    # d scale / d f2 = -2 scale^2 ; d scale / d f1 = +2 scale^2
    ds2 = -2.0 * bank.scale**2
    grad_f1 = (d_g * dg1).sum(axis=1) - ds2 * d_scale
    grad_f2 = (d_g * dg2).sum(axis=1) + ds2 * d_scale
    return grad_f1, grad_f2


def sinc_backward(grad_y: np.ndarray, cache: SincCache, p: SincParams, need_x: bool = True):
    """Returns ``(grad_x, grad_f1_raw, grad_band_raw)``."""
    bank = cache.bank
    if bank.f1.size != p.num_filters:
        raise ndarr.ShapeError(f"sinc_backward: cache has {bank.f1.size} filters, params have {p.num_filters}")
    grad_x, grad_taps = ndarr.conv1d_backward(grad_y, cache.x, bank.taps, 1, need_x=need_x)
    g1, g2 = taps_backward(grad_taps, bank)
    cut = cache.cut
    live2 = ~cut.f2_clamped
    g2 = np.where(live2, g2, 0.0)
    g_f1_eff = np.where(cut.f1_clamped, 0.0, g1 + g2)
    grad_f1_raw = np.sign(p.f1_raw) * g_f1_eff
    grad_band_raw = np.sign(p.band_raw) * g2
    return grad_x, grad_f1_raw, grad_band_raw


def magnitude_response_db(taps: np.ndarray, nfft: int = 4096) -> np.ndarray:
    """|FFT| in dB of each filter, ``[F, nfft//2 + 1]``."""
    taps = np.asarray(taps).reshape(-1, np.asarray(taps).shape[-1])
    mag = np.abs(np.fft.rfft(taps, n=nfft, axis=-1))
    return 20.0 * np.log10(np.maximum(mag, 1e-300))


def bank_cutoffs_hz(p: SincParams) -> tuple[np.ndarray, np.ndarray]:
    f1, f2 = effective_cutoffs(p)
    return f1 * p.sample_rate, f2 * p.sample_rate


__all__ = [
    "SincParams", "FilterBank", "mel_init", "effective_cutoffs", "build_filters", "sinc_taps",
    "sinc_taps_full", "sinc_forward", "sinc_backward", "hamming", "magnitude_response_db",
    "bank_cutoffs_hz",
]
