"""Training / evaluation harness: epochs, frame error rate, sweeps, checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from .config import TrainConfig, fingerprint, parse_train_config, train_config_text
from .loss import AM_SOFTMAX, SOFTMAX, LossConfig, compute_loss, decision_margin_stat
from .ndarr import NonFiniteError
from .network import Model, init_model, model_backward, model_forward
from .optim import OptimState, rmsprop_step
from .signal import FrameDataset

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "split", "loss", "fer_percent", "margin_stat", "wall_ms")


class TrainingError(RuntimeError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass
class TrainState:
    config: TrainConfig
    model: Model
    optim: OptimState
    epoch: int
    rng: np.random.Generator

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.config)


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    fer_percent: float
    margin_stat: float
    wall_ms: float

    def as_csv(self) -> list[str]:
        return [str(self.epoch), self.split, repr(self.loss), repr(self.fer_percent),
                repr(self.margin_stat), repr(self.wall_ms)]


def init_state(cfg: TrainConfig) -> TrainState:
    model = init_model(cfg.model, cfg.seed)
    return TrainState(cfg, model, OptimState.zeros_like(model.params), 0, np.random.default_rng([cfg.seed, 2]))


def sample_batch(ds: FrameDataset, batch_size: int, rng: np.random.Generator):
    """Uniform sampling with replacement."""
    if len(ds) == 0:
        raise EmptyDatasetError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=batch_size)
    return ds.frames[idx], ds.labels[idx]


def _maybe_margin(emb, w, labels) -> float | None:
    if np.unique(labels).size < 2:
        return None
    return decision_margin_stat(emb, w, labels)


def train_epoch(state: TrainState, ds: FrameDataset, cfg: TrainConfig | None = None,
                stats: dict | None = None) -> tuple[TrainState, float]:
    """Run ``batches_per_epoch`` RMSprop steps; returns the batch-mean loss.

    If ``stats`` is given it receives the epoch's running ``fer_percent`` and
    ``margin_stat`` over the sampled training batches.
    """
    cfg = cfg or state.config
    m = state.model
    drop_rng = state.rng if cfg.model.dropout > 0 else None
    losses, margins = [], []
    wrong = seen = 0
    for i in range(cfg.batches_per_epoch):
        x, y = sample_batch(ds, cfg.batch_size, state.rng)
        try:
            emb, cache = model_forward(m, x, drop_rng)
            out = compute_loss(emb, m.classifier, y, cfg.loss)
            grads = model_backward(m, out.grad_embeddings, cache, out.grad_W)
            rmsprop_step(m.params, grads, state.optim, cfg.optim)
        except NonFiniteError as e:
            raise TrainingError(f"epoch {state.epoch + 1}, batch {i}: {e}") from e
        losses.append(out.loss)
        wrong += int((out.posteriors.argmax(axis=1) != y).sum())
        seen += len(y)
        ms = _maybe_margin(emb, m.classifier, y)
        if ms is not None:
            margins.append(ms)
    state.epoch += 1
    if stats is not None:
        stats["fer_percent"] = 100.0 * wrong / seen
        stats["margin_stat"] = float(np.mean(margins)) if margins else float("nan")
    return state, float(np.mean(losses))


def predict(model: Model, ds: FrameDataset, loss_cfg: LossConfig, batch: int = 256):
    """Embeddings, margin-free predictions and per-frame losses for a dataset."""
    if len(ds) == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    embs, preds, per = [], [], []
    for s in range(0, len(ds), batch):
        emb, _ = model_forward(model, ds.frames[s : s + batch])
        out = compute_loss(emb, model.classifier, ds.labels[s : s + batch], loss_cfg)
        embs.append(emb)
        preds.append(out.posteriors.argmax(axis=1))
        per.append(out.per_sample)
    return np.concatenate(embs), np.concatenate(preds), np.concatenate(per)


def frame_error_rate(pred: np.ndarray, labels: np.ndarray) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyDatasetError("no frames")
    return 100.0 * int((pred != labels).sum()) / labels.size


def evaluate_fer(state: TrainState, ds: FrameDataset, cfg: TrainConfig | None = None,
                 batch: int | None = None) -> tuple[float, float, float]:
    """(FER %, mean loss, decision margin) over every frame of ``ds``; no updates."""
    cfg = cfg or state.config
    emb, pred, per = predict(state.model, ds, cfg.loss, batch or cfg.eval_batch)
    ms = _maybe_margin(emb, state.model.classifier, ds.labels)
    return frame_error_rate(pred, ds.labels), float(per.mean()), float("nan") if ms is None else ms


# ---------------------------------------------------------------------------
# Checkpoints


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    t = {f"model/{k}": v for k, v in state.model.params.items()}
    t.update({f"optim.v/{k}": v for k, v in state.optim.v.items()})
    t["optim.step"] = np.array(float(state.optim.step))
    return t


def save_checkpoint(state: TrainState, path: str | os.PathLike, storage: str = "f64") -> None:
    fp = f"{state.fingerprint}\n{train_config_text(state.config)}"
    ckpt.write(path, ckpt.encode(fp, state_tensors(state), state.rng.bit_generator.state, state.epoch, storage))


def load_checkpoint(path: str | os.PathLike, expected: TrainConfig | None = None) -> TrainState:
    """Load a checkpoint; with ``expected`` the config fingerprints must match."""
    data = Path(path).read_bytes()
    fp, tensors, rng_state, epoch = ckpt.decode(data, str(path))
    digest, _, text = fp.partition("\n")
    cfg = parse_train_config(text, f"{path}:fingerprint")
    if fingerprint(cfg) != digest:
        raise ckpt.CheckpointError(f"{path}: embedded config does not hash to its fingerprint")
    if expected is not None and fingerprint(expected) != digest:
        raise ckpt.FingerprintMismatchError(
            f"{path}: checkpoint fingerprint {digest[:12]} does not match config {fingerprint(expected)[:12]}"
        )
    model = init_model(cfg.model, cfg.seed)
    params, v = {}, {}
    for k, ref in model.params.items():
        for prefix, dst in (("model/", params), ("optim.v/", v)):
            name = prefix + k
            if name not in tensors:
                raise ckpt.CheckpointError(f"{path}: missing tensor {name!r}")
            if tensors[name].shape != ref.shape:
                raise ckpt.CheckpointError(
                    f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {ref.shape}"
                )
            dst[k] = tensors[name].copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    if expected is not None:
        cfg = expected
    return TrainState(cfg, Model(cfg.model, params), OptimState(v, int(tensors["optim.step"])), epoch, rng)


# ---------------------------------------------------------------------------
# Runs


class MetricsWriter:
    def __init__(self, path: Path | None, append: bool = False):
        self.path = path
        if path is not None and not (append and path.exists()):
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRICS_HEADER)

    def write(self, row: MetricsRow) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(row.as_csv())


def read_metrics(path: str | os.PathLike) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow(int(r["epoch"]), r["split"], float(r["loss"]), float(r["fer_percent"]),
                           float(r["margin_stat"]), float(r["wall_ms"])) for r in csv.DictReader(fh)]


def fit(cfg: TrainConfig, train_ds: FrameDataset, test_ds: FrameDataset, out_dir: str | os.PathLike | None = None,
        run_id: str = "run", state: TrainState | None = None) -> tuple[TrainState, list[MetricsRow]]:
    """Train to ``cfg.epochs``, evaluating at epoch 0 and every ``eval_every`` epochs.

    Passing ``state`` resumes it (its epoch counter decides where to start).
    """
    if cfg.batch_size > len(train_ds):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_ds)}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    resuming = state is not None
    state = state or init_state(cfg)
    state.config = cfg
    writer = MetricsWriter(out / f"metrics_{run_id}.csv" if out else None, append=resuming)
    rows: list[MetricsRow] = []

    def emit(row: MetricsRow):
        rows.append(row)
        writer.write(row)

    def evaluate():
        t0 = time.perf_counter()
        fer, loss, ms = evaluate_fer(state, test_ds, cfg)
        emit(MetricsRow(state.epoch, "test", loss, fer, ms, 1000 * (time.perf_counter() - t0)))
        log.info("%s epoch %d test fer=%.2f%% loss=%.4f margin=%.4f", run_id, state.epoch, fer, loss, ms)

    def save():
        if out is not None:
            save_checkpoint(state, out / f"ckpt_{run_id}_e{state.epoch:04d}.amsn")
            save_checkpoint(state, out / f"ckpt_{run_id}_last.amsn")

    limits = threadpool_limits(1) if cfg.deterministic else nullcontext()
    with limits:
        if state.epoch == 0:
            evaluate()
        while state.epoch < cfg.epochs:
            t0 = time.perf_counter()
            stats: dict = {}
            _, loss = train_epoch(state, train_ds, cfg, stats)
            emit(MetricsRow(state.epoch, "train", loss, stats["fer_percent"], stats["margin_stat"],
                            1000 * (time.perf_counter() - t0)))
            if state.epoch % cfg.eval_every == 0 or state.epoch == cfg.epochs:
                evaluate()
                save()
    return state, rows


def run_id_for(loss: LossConfig) -> str:
    return SOFTMAX if loss.kind == SOFTMAX else f"am_m{loss.m:.2f}"


def margin_sweep(base: TrainConfig, margins, train_ds: FrameDataset, test_ds: FrameDataset,
                 out_dir: str | os.PathLike | None = None) -> dict[str, list[MetricsRow]]:
    """Softmax baseline plus one AM-softmax run per margin, all from the same seed.

    Writes one metrics CSV per run and ``summary.csv`` (test FER, epoch x run).
    """
    for m in margins:
        if not 0.0 <= m < 1.0:
            raise ValueError(f"margin {m} outside [0, 1)")
    runs = {}
    cfgs = [base.replace(loss=dataclasses.replace(base.loss, kind=SOFTMAX))]
    cfgs += [base.replace(loss=dataclasses.replace(base.loss, kind=AM_SOFTMAX, m=float(m))) for m in margins]
    for c in cfgs:
        rid = run_id_for(c.loss)
        log.info("sweep: starting %s", rid)
        _, rows = fit(c, train_ds, test_ds, out_dir, rid)
        runs[rid] = rows
    if out_dir is not None:
        write_summary(Path(out_dir) / "summary.csv", runs, list(margins))
    return runs


def summary_table(runs: dict[str, list[MetricsRow]], margins) -> tuple[list[str], list[list]]:
    header = ["epoch", "baseline"] + [f"m={m:.2f}" for m in margins]
    keys = [SOFTMAX] + [f"am_m{m:.2f}" for m in margins]
    tests = {k: {r.epoch: r.fer_percent for r in runs[k] if r.split == "test"} for k in keys}
    epochs = sorted(tests[SOFTMAX])
    body = [[e] + [tests[k].get(e, float("nan")) for k in keys] for e in epochs]
    return header, body


def write_summary(path: Path, runs, margins) -> None:
    header, body = summary_table(runs, margins)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in body:
            wr.writerow([row[0]] + [repr(v) for v in row[1:]])
