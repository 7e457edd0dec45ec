"""Command-line entry point: ``amsincnet <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 a gradient
check above its threshold.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import math
import subprocess
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import CheckpointError
from .config import TrainConfig, load_corpus_spec, load_train_config
from .gradcheck import run_suite
from .loss import AM_SOFTMAX, SOFTMAX
from .ndarr import NonFiniteError, ShapeError
from .signal import MANIFEST, ConfigError, WavError, load_corpus, read_wav, write_corpus
from .sincbank import build_filters, magnitude_response_db
from .trainer import TrainingError, evaluate_fer, fit, load_checkpoint, margin_sweep, run_id_for

log = logging.getLogger("amsincnet")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_THRESHOLD = 4

FFT_SIZE = 4096


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Helpers


def parse_margins(text: str) -> list[float]:
    """``"a:b:step"`` to an inclusive list of margins; an empty string means none."""
    text = text.strip()
    if not text:
        return []
    parts = text.split(":")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed margin range {text!r}, expected start:stop:step") from None
    if step <= 0 or b < a or not all(map(math.isfinite, (a, b, step))):
        raise argparse.ArgumentTypeError(f"malformed margin range {text!r}")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 10) for i in range(n)]


def _version_string() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_run_manifest(out_dir: Path, args: argparse.Namespace) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "config_path": getattr(args, "config", None) or getattr(args, "spec", None),
        "seed": args.seed,
        "output_dir": str(out_dir),
        "version": _version_string(),
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _corpus_sample_rate(data_dir: Path) -> int:
    manifest = data_dir / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest} not found")
    with open(manifest, newline="") as fh:
        first = next(csv.DictReader(fh), None)
    if first is None:
        raise ConfigError(f"{manifest} is empty")
    return read_wav(data_dir / first["path"]).sample_rate_hz


def _load_data(cfg: TrainConfig, data_dir: str):
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    fs = _corpus_sample_rate(root)
    train, test = load_corpus(root, cfg.window_ms, cfg.overlap_ms)
    return fs, train, test


def _fit_model_to_data(cfg: TrainConfig, fs: int, train) -> TrainConfig:
    """Take speaker count, frame length and sample rate from the corpus."""
    model = dataclasses.replace(cfg.model, num_speakers=train.num_speakers, frame_len=train.frame_len,
                                sample_rate=fs)
    return cfg.replace(model=model)


def _train_config(args) -> TrainConfig:
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    loss = cfg.loss
    if getattr(args, "loss", None):
        loss = dataclasses.replace(loss, kind=SOFTMAX if args.loss == "softmax" else AM_SOFTMAX)
    if getattr(args, "margin", None) is not None:
        loss = dataclasses.replace(loss, m=args.margin)
    if getattr(args, "normalize_baseline", False):
        loss = dataclasses.replace(loss, normalize_baseline=True)
    return cfg.replace(loss=loss)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    spec = load_corpus_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed, voices=[])
    out = Path(args.out)
    write_run_manifest(out, args)
    manifest = write_corpus(spec, out)
    log.info("wrote %s", manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    write_run_manifest(out, args)
    fs, train, test = _load_data(cfg, args.data)
    cfg = _fit_model_to_data(cfg, fs, train)
    state = load_checkpoint(args.resume, expected=cfg) if args.resume else None
    _, rows = fit(cfg, train, test, out, run_id_for(cfg.loss), state)
    last = [r for r in rows if r.split == "test"]
    if last:
        print(",".join(last[-1].as_csv()[:5]))
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = state.config
    fs, _, test = _load_data(cfg, args.data)
    if (test.frame_len, test.num_speakers, fs) != (cfg.model.frame_len, cfg.model.num_speakers, cfg.model.sample_rate):
        raise ConfigError(
            f"data has frame_len={test.frame_len}, speakers={test.num_speakers}, fs={fs}; checkpoint model expects "
            f"{cfg.model.frame_len}, {cfg.model.num_speakers}, {cfg.model.sample_rate}"
        )
    limits = threadpool_limits(1) if cfg.deterministic else nullcontext()
    with limits:
        fer, loss, margin = evaluate_fer(state, test, cfg)
    print(",".join([str(state.epoch), "test", repr(loss), repr(fer), repr(margin)]))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    write_run_manifest(out, args)
    fs, train, test = _load_data(cfg, args.data)
    cfg = _fit_model_to_data(cfg, fs, train)
    margin_sweep(cfg, args.margins, train, test, out)
    print(out / "summary.csv")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = run_suite(args.size, args.seed or 0)
    failed = False
    for name, err in worst.items():
        ok = err < args.threshold
        failed |= not ok
        print(f"{name},{err!r},{'pass' if ok else 'FAIL'}")
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_export_filters(args) -> int:
    state = load_checkpoint(args.ckpt)
    out = Path(args.out)
    write_run_manifest(out, args)
    p = state.model.sinc_params()
    bank = build_filters(p)
    fs = p.sample_rate
    f1_hz, f2_hz = bank.f1 * fs, bank.f2 * fs
    taps = bank.taps[:, 0, :]
    with open(out / "filters_taps.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filter_id", "f1_hz", "f2_hz", "tap_index", "tap_value"])
        for i, row in enumerate(taps):
            for j, v in enumerate(row):
                wr.writerow([i, repr(float(f1_hz[i])), repr(float(f2_hz[i])), j, repr(float(v))])
    db = magnitude_response_db(taps, FFT_SIZE)
    freqs = np.arange(db.shape[1]) * fs / FFT_SIZE
    with open(out / "filters_response.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filter_id", "freq_hz", "magnitude_db"])
        for i, row in enumerate(db):
            for f, v in zip(freqs, row):
                wr.writerow([i, repr(float(f)), repr(float(v))])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    baseline = argparse.ArgumentParser(add_help=False)
    baseline.add_argument("--normalize-baseline", action="store_true",
                          help="feed the softmax head s*cos logits instead of raw f W^T")

    ap = argparse.ArgumentParser(prog="amsincnet", description="Sinc filter-bank speaker identification toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic speaker corpus")
    p.add_argument("--spec", required=True, help="corpus spec file (corpus.* and voice.<i>.* keys)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common, baseline], help="train one model")
    p.add_argument("--config", default=None, help="key=value training config (defaults to the desk model)")
    p.add_argument("--data", required=True, help="corpus directory with manifest.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=("softmax", "am"), default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="test-set FER of a checkpoint as one CSV row")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, baseline], help="softmax baseline plus one run per margin")
    p.add_argument("--config", default=None)
    p.add_argument("--margins", type=parse_margins, default=parse_margins("0.35:0.80:0.05"),
                   help="start:stop:step, inclusive; empty for baseline only")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every gradient")
    p.add_argument("--size", choices=("tiny", "small"), default="tiny")
    p.add_argument("--threshold", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-filters", parents=[common], help="dump sinc taps and magnitude responses")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_filters)
    return ap


DATA_ERRORS = (ConfigError, WavError, CheckpointError, OSError, ShapeError, ValueError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("amsincnet: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    limits = threadpool_limits(args.threads) if args.threads else nullcontext()
    try:
        with limits:
            return args.func(args)
    except (TrainingError, NonFiniteError) as e:
        print(f"amsincnet: training failed: {e}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as e:
        print(f"amsincnet: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
