import csv
import json

import numpy as np
import pytest

from amsincnet.cli import main, parse_margins
from amsincnet.config import train_config_text
from amsincnet.trainer import init_state, load_checkpoint, read_metrics, save_checkpoint

from conftest import SMALL_SPEC

SPEC_TEXT = "".join(f"corpus.{k}={':'.join(map(str, v)) if isinstance(v, tuple) else v}\n"
                    for k, v in SMALL_SPEC.items())


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.txt").write_text(SPEC_TEXT)
    assert main(["synth", "--spec", str(root / "spec.txt"), "--out", str(root / "data")]) == 0
    return root / "data"


@pytest.fixture
def config_file(tmp_path, small_config):
    path = tmp_path / "train.cfg"
    path.write_text(train_config_text(small_config.replace(epochs=2)))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSynth:
    def test_counts_and_split(self, tmp_path):
        (tmp_path / "spec.txt").write_text("corpus.num_speakers=2\ncorpus.utterances_per_speaker=8\n"
                                           "corpus.utterance_sec=0.3\ncorpus.sample_rate_hz=8000\n")
        assert main(["synth", "--spec", str(tmp_path / "spec.txt"), "--out", str(tmp_path / "d")]) == 0
        assert len(list((tmp_path / "d").glob("*.wav"))) == 16
        rows = read_csv(tmp_path / "d" / "manifest.csv")
        assert len(rows) == 16
        assert sum(r["split"] == "train" for r in rows) == 10
        manifest = json.loads((tmp_path / "d" / "run_manifest.json").read_text())
        assert manifest["command"] == "synth" and {"seed", "version", "timestamp", "output_dir"} <= set(manifest)

    def test_reproducible_bytes(self, tmp_path, corpus_dir):
        (tmp_path / "spec.txt").write_text(SPEC_TEXT)
        assert main(["synth", "--spec", str(tmp_path / "spec.txt"), "--out", str(tmp_path / "again")]) == 0
        for wav in corpus_dir.glob("*.wav"):
            assert (tmp_path / "again" / wav.name).read_bytes() == wav.read_bytes()

    def test_seed_flag(self, tmp_path, corpus_dir):
        (tmp_path / "spec.txt").write_text(SPEC_TEXT)
        assert main(["synth", "--spec", str(tmp_path / "spec.txt"), "--out", str(tmp_path / "s"), "--seed", "9"]) == 0
        first = sorted(corpus_dir.glob("*.wav"))[0].name
        assert (tmp_path / "s" / first).read_bytes() != (corpus_dir / first).read_bytes()

    def test_bad_spec(self, tmp_path, capsys):
        (tmp_path / "spec.txt").write_text("corpus.speakers=2\n")
        assert main(["synth", "--spec", str(tmp_path / "spec.txt"), "--out", str(tmp_path / "d")]) == 3
        assert "spec.txt:1" in capsys.readouterr().err


class TestTrainEval:
    def test_softmax_dispatch(self, tmp_path, corpus_dir, config_file):
        assert main(["train", "--config", str(config_file), "--data", str(corpus_dir), "--out", str(tmp_path),
                     "--loss", "softmax"]) == 0
        assert (tmp_path / "metrics_softmax.csv").exists()

    def test_normalize_baseline_flag(self, tmp_path, corpus_dir, config_file):
        assert main(["train", "--config", str(config_file), "--data", str(corpus_dir), "--out", str(tmp_path),
                     "--loss", "softmax", "--normalize-baseline"]) == 0
        assert load_checkpoint(tmp_path / "ckpt_softmax_last.amsn").config.loss.normalize_baseline

    def test_am_then_eval_matches(self, tmp_path, corpus_dir, config_file, capsys):
        assert main(["train", "--config", str(config_file), "--data", str(corpus_dir), "--out", str(tmp_path),
                     "--loss", "am", "--margin", "0.5", "--threads", "1"]) == 0
        capsys.readouterr()
        rows = read_metrics(tmp_path / "metrics_am_m0.50.csv")
        last = [r for r in rows if r.split == "test"][-1]
        assert main(["eval", "--ckpt", str(tmp_path / "ckpt_am_m0.50_last.amsn"), "--data", str(corpus_dir)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        assert out[0] == ",".join(last.as_csv()[:5])

    def test_resume_requires_matching_config(self, tmp_path, corpus_dir, config_file, capsys):
        args = ["train", "--config", str(config_file), "--data", str(corpus_dir), "--out", str(tmp_path)]
        assert main(args) == 0
        ck = str(tmp_path / "ckpt_am_m0.40_last.amsn")
        assert main(args + ["--resume", ck, "--seed", "77"]) == 3
        assert "fingerprint" in capsys.readouterr().err

    def test_missing_data(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
        assert "nope" in capsys.readouterr().err

    def test_config_error_names_line(self, tmp_path, corpus_dir, capsys):
        (tmp_path / "bad.cfg").write_text("train.seed=1\noptim.lr=fast\n")
        assert main(["train", "--config", str(tmp_path / "bad.cfg"), "--data", str(corpus_dir),
                     "--out", str(tmp_path)]) == 3
        assert "bad.cfg:2: field 'optim.lr'" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tmp_path, corpus_dir, capsys):
        (tmp_path / "x.amsn").write_bytes(b"\x00" * 32)
        assert main(["eval", "--ckpt", str(tmp_path / "x.amsn"), "--data", str(corpus_dir)]) == 3
        assert "bad magic" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["train"])
        assert e.value.code == 2


class TestSweep:
    def test_ranges(self):
        assert parse_margins("0.5:0.5:0.05") == [0.5]
        assert parse_margins("") == []
        assert parse_margins("0.35:0.80:0.05") == [0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8]

    @pytest.mark.parametrize("text", ["0.1:0.2", "a:b:c", "0.5:0.1:0.1", "0.1:0.5:0"])
    def test_malformed(self, text, tmp_path):
        with pytest.raises(SystemExit) as e:
            main(["sweep", "--margins", text, "--data", str(tmp_path), "--out", str(tmp_path)])
        assert e.value.code == 2

    @pytest.mark.parametrize("margins,columns", [("", ["epoch", "baseline"]),
                                                 ("0.5:0.5:0.05", ["epoch", "baseline", "m=0.50"])])
    def test_summary(self, tmp_path, corpus_dir, config_file, margins, columns):
        assert main(["sweep", "--config", str(config_file), "--margins", margins, "--data", str(corpus_dir),
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0].split(",") == columns
        assert len(lines) == 1 + 3


class TestGradcheck:
    def test_pass_fail_and_deterministic(self, capsys):
        assert main(["gradcheck", "--size", "tiny"]) == 0
        first = capsys.readouterr().out
        assert main(["gradcheck", "--size", "tiny", "--threshold", "0"]) == 4
        second = capsys.readouterr().out
        errs = lambda text: [line.split(",")[:2] for line in text.splitlines()]
        assert errs(first) == errs(second)
        assert [e[0] for e in errs(first)] == ["ndarr", "sincbank", "network", "loss", "model"]
        assert all(line.endswith("FAIL") for line in second.splitlines())


class TestExportFilters:
    def test_fresh_model(self, tmp_path, small_config):
        cfg = small_config.replace(model=small_config.model.__class__.desk(num_speakers=3, frame_len=1600,
                                                                            sample_rate=8000))
        save_checkpoint(init_state(cfg), tmp_path / "m.amsn")
        assert main(["export-filters", "--ckpt", str(tmp_path / "m.amsn"), "--out", str(tmp_path / "f")]) == 0
        taps = read_csv(tmp_path / "f" / "filters_taps.csv")
        nf, length = cfg.model.sinc_filters, cfg.model.sinc_len
        assert len(taps) == nf * length
        lows = [float(taps[i * length]["f1_hz"]) for i in range(nf)]
        highs = [float(taps[i * length]["f2_hz"]) for i in range(nf)]
        assert np.all(np.diff(lows) > 0) and np.all(np.diff(highs) > 0)
        tap_values = np.array([float(r["tap_value"]) for r in taps]).reshape(nf, length)
        resp = read_csv(tmp_path / "f" / "filters_response.csv")
        assert len(resp) == nf * 2049
        db = np.array([float(r["magnitude_db"]) for r in resp]).reshape(nf, 2049)
        offline = 20 * np.log10(np.abs(np.fft.rfft(tap_values, 4096, axis=1)))
        np.testing.assert_allclose(db, offline, rtol=0, atol=1e-9)
        assert float(resp[1]["freq_hz"]) == pytest.approx(8000 / 4096)
