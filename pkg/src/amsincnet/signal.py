"""Waveform I/O, framing, per-chunk standardization and the synthetic corpus.

The synthetic corpus stands in for TIMIT: every speaker is a harmonic source
with a jittered F0 contour, shaped by a three-formant resonance envelope and
mixed with a low noise floor.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

SILENCE_STD = 1e-8


class WavError(ValueError):
    """Base class for WAV decode failures."""


class NotRiffError(WavError):
    pass


class UnsupportedFormatError(WavError):
    """Format code is not 1 (integer PCM)."""


class ChannelCountError(WavError):
    pass


class BitDepthError(WavError):
    pass


class TruncatedWavError(WavError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate_hz


# ---------------------------------------------------------------------------
# WAV


def read_wav(path: str | os.PathLike) -> Waveform:
    """Decode a mono 16-bit PCM RIFF/WAVE file into samples in [-1, 1]."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedWavError(f"{path}: {len(data)} bytes is too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise NotRiffError(f"{path}: not a RIFF/WAVE file")

    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise TruncatedWavError(f"{path}: chunk {cid!r} declares {size} bytes, {len(data) - body} available")
        if cid == b"fmt ":
            if size < 16:
                raise TruncatedWavError(f"{path}: fmt chunk of {size} bytes")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif cid == b"data":
            pcm = data[body : body + size]
        pos = body + size + (size & 1)
    if fmt is None:
        raise TruncatedWavError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise TruncatedWavError(f"{path}: missing data chunk")

    code, channels, rate, _, _, bits = fmt
    if code != 1:
        raise UnsupportedFormatError(f"{path}: format code {code}, only PCM (1) is supported")
    if channels != 1:
        raise ChannelCountError(f"{path}: {channels} channels, only mono is supported")
    if bits != 16:
        raise BitDepthError(f"{path}: {bits}-bit samples, only 16-bit is supported")
    if len(pcm) % 2:
        raise TruncatedWavError(f"{path}: odd-sized 16-bit data chunk")
    ints = np.frombuffer(pcm, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path: str | os.PathLike, w: Waveform | np.ndarray, sample_rate_hz: int | None = None) -> None:
    """Write mono 16-bit PCM.  Integer arrays are written verbatim."""
    if isinstance(w, Waveform):
        ints = to_pcm16(w.samples)
        rate = w.sample_rate_hz
    else:
        arr = np.asarray(w)
        ints = arr.astype("<i2") if arr.dtype.kind in "iu" else to_pcm16(arr)
        rate = sample_rate_hz or 16000
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# Framing


def _check_window(window_ms: float, overlap_ms: float) -> None:
    if not (window_ms > overlap_ms >= 0):
        raise ConfigError(f"need window_ms > overlap_ms >= 0, got window={window_ms} overlap={overlap_ms}")


def frame_len(window_ms: float, fs: int) -> int:
    return int(round(window_ms * fs / 1000))


def frame_count(num_samples: int, fs: int, window_ms: float = 200, overlap_ms: float = 10) -> int:
    """Closed-form number of frames: floor((len_ms - window) / hop) + 1."""
    _check_window(window_ms, overlap_ms)
    len_ms = Fraction(num_samples * 1000, fs)
    win = Fraction(window_ms)
    if len_ms < win:
        return 0
    return math.floor((len_ms - win) / (win - Fraction(overlap_ms))) + 1


def chunk(w: Waveform, window_ms: float = 200, overlap_ms: float = 10) -> list[np.ndarray]:
    """Split into fixed-length frames; consecutive frames share ``overlap_ms``."""
    _check_window(window_ms, overlap_ms)
    fs = w.sample_rate_hz
    hop_ms = window_ms - overlap_ms
    n = frame_len(window_ms, fs)
    frames = []
    i = 0
    while True:
        start = int(round(i * hop_ms * fs / 1000))
        if start + n > len(w.samples):
            break
        frames.append(w.samples[start : start + n].copy())
        i += 1
    return frames


def standardize_chunk(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    sd = max(frame.std(), SILENCE_STD)
    return (frame - frame.mean()) / sd


def mel(f_hz):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("mel: frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_inv(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel_inv: mel value must be non-negative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class FrameDataset:
    frames: np.ndarray  # [N, T_frame]
    labels: np.ndarray  # [N] int
    utterance_id: np.ndarray  # [N] int
    num_speakers: int
    frame_len: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64).reshape(-1, self.frame_len)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.utterance_id = np.asarray(self.utterance_id, dtype=np.int64)
        if not (len(self.frames) == len(self.labels) == len(self.utterance_id)):
            raise ConfigError("frames, labels and utterance ids differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_speakers):
            raise ConfigError(f"labels out of range [0, {self.num_speakers})")

    def __len__(self) -> int:
        return len(self.labels)


def build_dataset(
    utterances: list[tuple[Waveform, int, int]],
    num_speakers: int,
    window_ms: float = 200,
    overlap_ms: float = 10,
) -> FrameDataset:
    """Chunk and standardize ``(waveform, speaker, utterance_id)`` triples.

    Frames whose raw standard deviation is below the silence threshold are dropped.
    """
    if not utterances:
        raise ConfigError("no utterances")
    fs = utterances[0][0].sample_rate_hz
    n = frame_len(window_ms, fs)
    frames, labels, uids = [], [], []
    for w, spk, uid in utterances:
        if w.sample_rate_hz != fs:
            raise ConfigError(f"mixed sample rates {fs} and {w.sample_rate_hz}")
        for fr in chunk(w, window_ms, overlap_ms):
            if fr.std() < SILENCE_STD:
                continue
            frames.append(standardize_chunk(fr))
            labels.append(spk)
            uids.append(uid)
    return FrameDataset(np.array(frames).reshape(-1, n), labels, uids, num_speakers, n)


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass
class VoiceParams:
    f0_range_hz: tuple[float, float]
    formants_hz: tuple[float, float, float]
    bandwidths_hz: tuple[float, float, float]
    noise_floor: float = 0.01


@dataclass
class CorpusSpec:
    num_speakers: int = 8
    utterances_per_speaker: int = 8
    utterance_sec: float = 2.0
    sample_rate_hz: int = 16000
    seed: int = 0
    split: tuple[int, int] = (5, 3)
    window_ms: float = 200
    overlap_ms: float = 10
    voices: list[VoiceParams] = field(default_factory=list)

    def __post_init__(self):
        if not self.voices:
            self.voices = random_voices(self.num_speakers, self.sample_rate_hz, self.seed)
        self.validate()

    @property
    def num_train(self) -> int:
        a, b = self.split
        return int(round(self.utterances_per_speaker * a / (a + b)))

    def validate(self) -> None:
        nyq = self.sample_rate_hz / 2
        if self.num_speakers < 2:
            raise ConfigError("num_speakers must be >= 2")
        if len(self.voices) != self.num_speakers:
            raise ConfigError(f"{len(self.voices)} voices for {self.num_speakers} speakers")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        _check_window(self.window_ms, self.overlap_ms)
        if self.utterance_sec * self.sample_rate_hz < frame_len(self.window_ms, self.sample_rate_hz):
            raise ConfigError("utterance shorter than one frame window")
        if min(self.split) < 1 or not (1 <= self.num_train < self.utterances_per_speaker):
            raise ConfigError(f"split {self.split} leaves an empty train or test set")
        for i, v in enumerate(self.voices):
            lo, hi = v.f0_range_hz
            if not 0 < lo <= hi < nyq:
                raise ConfigError(f"speaker {i}: bad F0 range {v.f0_range_hz}")
            if any(not 0 < f < nyq for f in v.formants_hz):
                raise ConfigError(f"speaker {i}: formants {v.formants_hz} must lie below Nyquist {nyq}")
            if any(b <= 0 for b in v.bandwidths_hz) or v.noise_floor < 0:
                raise ConfigError(f"speaker {i}: bandwidths and noise floor must be positive")


def random_voices(num_speakers: int, fs: int, seed: int) -> list[VoiceParams]:
    """Draw speaker voices with F0 in 90-260 Hz and formants spread over the band."""
    rng = np.random.default_rng([seed, 0xC0FFEE])
    top = min(0.45 * fs, 5000.0)
    voices = []
    for _ in range(num_speakers):
        f0 = rng.uniform(90.0, 240.0)
        f1 = rng.uniform(250.0, 0.2 * top)
        f2 = rng.uniform(f1 + 300.0, 0.55 * top)
        f3 = rng.uniform(f2 + 300.0, top)
        voices.append(
            VoiceParams(
                f0_range_hz=(f0, f0 * rng.uniform(1.1, 1.3)),
                formants_hz=(f1, f2, f3),
                bandwidths_hz=tuple(rng.uniform(60.0, 160.0, size=3)),
                noise_floor=0.01,
            )
        )
    return voices


def _resonator(x: np.ndarray, fc: float, bw: float, fs: int) -> np.ndarray:
    r = math.exp(-math.pi * bw / fs)
    theta = 2 * math.pi * fc / fs
    a = [1.0, -2 * r * math.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def synth_utterance(voice: VoiceParams, seconds: float, fs: int, rng: np.random.Generator) -> np.ndarray:
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    lo, hi = voice.f0_range_hz
    # slow random glide plus vibrato inside the speaker's F0 range
    knots = rng.uniform(lo, hi, size=max(2, int(seconds * 4) + 2))
    f0 = np.interp(t, np.linspace(0, seconds, len(knots)), knots)
    f0 = np.clip(f0 * (1 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t)), lo, hi)
    phase = 2 * np.pi * np.cumsum(f0) / fs + rng.uniform(0, 2 * np.pi)
    src = np.zeros(n)
    for h in range(1, int(fs / 2 / hi) + 1):
        src += np.sin(h * phase) / h
    out = src
    for fc, bw in zip(voice.formants_hz, voice.bandwidths_hz):
        fc = fc * rng.uniform(0.97, 1.03)
        out = out + 4.0 * _resonator(src, fc, bw, fs)
    # syllable-rate amplitude envelope
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 2 * np.pi))
    out = out * env
    out = out / (np.abs(out).max() + 1e-12) * 0.8
    out = out + voice.noise_floor * rng.standard_normal(n)
    return np.clip(out, -1.0, 1.0)


def synth_waveforms(spec: CorpusSpec) -> list[tuple[Waveform, int, int, str]]:
    """All utterances as ``(waveform, speaker, utterance_id, split)``."""
    spec.validate()
    out = []
    for spk, voice in enumerate(spec.voices):
        for u in range(spec.utterances_per_speaker):
            rng = np.random.default_rng([spec.seed, spk, u])
            x = synth_utterance(voice, spec.utterance_sec, spec.sample_rate_hz, rng)
            split = "train" if u < spec.num_train else "test"
            out.append((Waveform(x, spec.sample_rate_hz), spk, spk * spec.utterances_per_speaker + u, split))
    return out


def synth_corpus(spec: CorpusSpec) -> tuple[FrameDataset, FrameDataset]:
    utts = synth_waveforms(spec)
    parts = {}
    for split in ("train", "test"):
        chosen = [(w, s, u) for w, s, u, sp in utts if sp == split]
        parts[split] = build_dataset(chosen, spec.num_speakers, spec.window_ms, spec.overlap_ms)
    return parts["train"], parts["test"]


# ---------------------------------------------------------------------------
# On-disk corpora

MANIFEST = "manifest.csv"


def write_corpus(spec: CorpusSpec, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for w, spk, uid, split in synth_waveforms(spec):
        name = f"spk{spk:03d}_utt{uid:05d}.wav"
        write_wav(out / name, w)
        rows.append((name, spk, split))
    manifest = out / MANIFEST
    with open(manifest, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["path", "speaker_id", "split"])
        wr.writerows(rows)
    return manifest


def load_corpus(
    data_dir: str | os.PathLike, window_ms: float = 200, overlap_ms: float = 10
) -> tuple[FrameDataset, FrameDataset]:
    """Read ``manifest.csv`` plus WAVs into (train, test) frame datasets."""
    root = Path(data_dir)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest} not found")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{manifest} is empty")
    num_speakers = max(int(r["speaker_id"]) for r in rows) + 1
    parts: dict[str, list] = {"train": [], "test": []}
    for uid, r in enumerate(rows):
        if r["split"] not in parts:
            raise ConfigError(f"{manifest}: unknown split {r['split']!r}")
        parts[r["split"]].append((read_wav(root / r["path"]), int(r["speaker_id"]), uid))
    return tuple(build_dataset(parts[s], num_speakers, window_ms, overlap_ms) for s in ("train", "test"))
