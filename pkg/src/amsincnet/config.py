"""Flat ``key=value`` configuration files.

Keys use section dots (``model.sinc.filters=80``).  Blank lines and lines
starting with ``#`` are ignored.  List values are comma separated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field

from .loss import LossConfig
from .network import ModelConfig
from .optim import OptimConfig
from .signal import ConfigError, CorpusSpec, VoiceParams, random_voices


class ConfigParseError(ConfigError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    batch_size: int = 128
    epochs: int = 40
    batches_per_epoch: int = 800
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 8
    eval_batch: int = 256
    window_ms: float = 200.0
    overlap_ms: float = 10.0

    def __post_init__(self):
        for name in ("batch_size", "epochs", "batches_per_epoch", "eval_every", "eval_batch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        """The 80-filter, 462-speaker model with its long training schedule."""
        base = dict(model=ModelConfig(), epochs=352, batches_per_epoch=800, batch_size=128, eval_every=16)
        base.update(kw)
        return cls(**base)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _fmt(v, parse=None) -> str:
    """Canonical text for a value; ``parse`` pins numeric fields to their declared type."""
    if parse is float:
        return repr(float(v))
    if parse is int:
        return str(int(v))
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# key -> (section, attribute, parser); section None means TrainConfig itself
TRAIN_KEYS = {
    "model.num_speakers": ("model", "num_speakers", int),
    "model.frame_len": ("model", "frame_len", int),
    "model.sample_rate": ("model", "sample_rate", int),
    "model.sinc.filters": ("model", "sinc_filters", int),
    "model.sinc.length": ("model", "sinc_len", int),
    "model.sinc.min_low_hz": ("model", "min_low_hz", float),
    "model.sinc.min_band_hz": ("model", "min_band_hz", float),
    "model.conv.filters": ("model", "conv_filters", _ints),
    "model.conv.kernels": ("model", "conv_kernels", _ints),
    "model.pool": ("model", "pool", int),
    "model.dense": ("model", "dense", _ints),
    "model.leaky_slope": ("model", "leaky_slope", float),
    "model.rectify": ("model", "rectify", _bool),
    "model.dropout": ("model", "dropout", float),
    "loss.kind": ("loss", "kind", str),
    "loss.s": ("loss", "s", float),
    "loss.m": ("loss", "m", float),
    "loss.eps_div": ("loss", "eps_div", float),
    "loss.eps_norm": ("loss", "eps_norm", float),
    "loss.normalize_baseline": ("loss", "normalize_baseline", _bool),
    "optim.lr": ("optim", "lr", float),
    "optim.alpha": ("optim", "alpha", float),
    "optim.eps": ("optim", "eps", float),
    "train.batch_size": (None, "batch_size", int),
    "train.epochs": (None, "epochs", int),
    "train.batches_per_epoch": (None, "batches_per_epoch", int),
    "train.seed": (None, "seed", int),
    "train.deterministic": (None, "deterministic", _bool),
    "train.eval_every": (None, "eval_every", int),
    "train.eval_batch": (None, "eval_batch", int),
    "data.window_ms": (None, "window_ms", float),
    "data.overlap_ms": (None, "overlap_ms", float),
}

# Keys that do not change a run's trajectory, so resuming may alter them.
FINGERPRINT_EXEMPT = ("train.epochs",)


def read_pairs(text: str, source: str = "<config>") -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigParseError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigParseError(f"{source}:{lineno}: empty key")
        out.append((lineno, key, val))
    return out


def _apply(target_sections: dict, pairs, table, source):
    for lineno, key, val in pairs:
        if key not in table:
            raise ConfigParseError(f"{source}:{lineno}: unknown field {key!r}")
        section, attr, parse = table[key]
        try:
            target_sections[section][attr] = parse(val)
        except ValueError as e:
            raise ConfigParseError(f"{source}:{lineno}: field {key!r}: {e}") from None


def parse_train_config(text: str, source: str = "<config>", base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    sections = {
        "model": dataclasses.asdict(base.model),
        "loss": dataclasses.asdict(base.loss),
        "optim": dataclasses.asdict(base.optim),
        None: {f.name: getattr(base, f.name) for f in dataclasses.fields(base)
               if f.name not in ("model", "loss", "optim")},
    }
    _apply(sections, read_pairs(text, source), TRAIN_KEYS, source)
    try:
        return TrainConfig(
            model=ModelConfig(**sections["model"]),
            loss=LossConfig(**sections["loss"]),
            optim=OptimConfig(**sections["optim"]),
            **sections[None],
        )
    except ConfigError as e:
        raise ConfigParseError(f"{source}: {e}") from None


def load_train_config(path: str | os.PathLike | None, base: TrainConfig | None = None) -> TrainConfig:
    if path is None:
        return base or TrainConfig()
    with open(path) as fh:
        return parse_train_config(fh.read(), str(path), base)


def train_config_text(cfg: TrainConfig, exclude: tuple[str, ...] = ()) -> str:
    lines = []
    for key, (section, attr, parse) in TRAIN_KEYS.items():
        if key in exclude:
            continue
        obj = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key}={_fmt(getattr(obj, attr), parse)}")
    return "\n".join(lines) + "\n"


def fingerprint(cfg: TrainConfig) -> str:
    return hashlib.sha256(train_config_text(cfg, FINGERPRINT_EXEMPT).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Corpus specs

CORPUS_KEYS = {
    "corpus.num_speakers": (None, "num_speakers", int),
    "corpus.utterances_per_speaker": (None, "utterances_per_speaker", int),
    "corpus.utterance_sec": (None, "utterance_sec", float),
    "corpus.sample_rate_hz": (None, "sample_rate_hz", int),
    "corpus.seed": (None, "seed", int),
    "corpus.split": (None, "split", lambda s: tuple(int(v) for v in s.split(":"))),
    "corpus.window_ms": (None, "window_ms", float),
    "corpus.overlap_ms": (None, "overlap_ms", float),
}
VOICE_FIELDS = {
    "f0_range_hz": _floats,
    "formants_hz": _floats,
    "bandwidths_hz": _floats,
    "noise_floor": float,
}


def parse_corpus_spec(text: str, source: str = "<spec>") -> CorpusSpec:
    """Corpus keys plus optional per-speaker overrides ``voice.<i>.<field>=...``."""
    pairs = read_pairs(text, source)
    plain = [p for p in pairs if not p[1].startswith("voice.")]
    fields = {None: {}}
    _apply(fields, plain, CORPUS_KEYS, source)
    kw = fields[None]
    if "split" in kw and len(kw["split"]) != 2:
        raise ConfigParseError(f"{source}: field 'corpus.split' must look like 5:3")
    base = CorpusSpec.__dataclass_fields__
    n = kw.get("num_speakers", base["num_speakers"].default)
    fs = kw.get("sample_rate_hz", base["sample_rate_hz"].default)
    seed = kw.get("seed", base["seed"].default)
    voices = random_voices(n, fs, seed)
    for lineno, key, val in pairs:
        if not key.startswith("voice."):
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[2] not in VOICE_FIELDS or not parts[1].isdigit():
            raise ConfigParseError(f"{source}:{lineno}: unknown field {key!r}")
        i = int(parts[1])
        if i >= n:
            raise ConfigParseError(f"{source}:{lineno}: field {key!r}: speaker {i} >= num_speakers {n}")
        try:
            v = VOICE_FIELDS[parts[2]](val)
        except ValueError as e:
            raise ConfigParseError(f"{source}:{lineno}: field {key!r}: {e}") from None
        voices[i] = dataclasses.replace(voices[i], **{parts[2]: v})
    try:
        return CorpusSpec(voices=voices, **kw)
    except (ConfigError, TypeError) as e:
        raise ConfigParseError(f"{source}: {e}") from None


def load_corpus_spec(path: str | os.PathLike) -> CorpusSpec:
    with open(path) as fh:
        return parse_corpus_spec(fh.read(), str(path))


__all__ = ["TrainConfig", "ConfigParseError", "parse_train_config", "load_train_config", "train_config_text",
           "fingerprint", "parse_corpus_spec", "load_corpus_spec", "VoiceParams"]
