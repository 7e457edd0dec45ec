import numpy as np
import pytest

from amsincnet.config import (
    ConfigParseError,
    TrainConfig,
    fingerprint,
    parse_corpus_spec,
    parse_train_config,
    train_config_text,
)
from amsincnet.signal import ConfigError


class TestTrainConfig:
    def test_defaults_round_trip(self):
        cfg = TrainConfig()
        assert parse_train_config(train_config_text(cfg)) == cfg

    def test_parse_values(self):
        text = """
        # desk run
        model.sinc.filters = 12
        model.conv.filters = 4,6
        model.dense = 32,32
        loss.kind = softmax
        optim.lr = 0.002
        train.deterministic = false
        data.overlap_ms = 190
        """
        cfg = parse_train_config(text)
        assert cfg.model.sinc_filters == 12 and cfg.model.conv_filters == (4, 6)
        assert cfg.model.dense == (32, 32) and cfg.loss.kind == "softmax"
        assert cfg.optim.lr == 0.002 and cfg.deterministic is False and cfg.overlap_ms == 190.0

    def test_unknown_field_names_line(self):
        with pytest.raises(ConfigParseError, match=r"run\.cfg:3: unknown field 'model\.sinc\.filterz'"):
            parse_train_config("train.seed=1\n\nmodel.sinc.filterz=3\n", "run.cfg")

    def test_bad_value_names_field(self):
        with pytest.raises(ConfigParseError, match=r"x:1: field 'train.epochs'"):
            parse_train_config("train.epochs=many", "x")

    def test_missing_equals(self):
        with pytest.raises(ConfigParseError, match=":2:"):
            parse_train_config("train.seed=1\ntrain.seed 2")

    def test_invalid_combination(self):
        with pytest.raises(ConfigParseError):
            parse_train_config("loss.m=1.5")

    def test_nonpositive_counts(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)

    def test_full_scale_preset(self):
        cfg = TrainConfig.full_scale()
        assert (cfg.batch_size, cfg.epochs, cfg.model.sinc_filters, cfg.model.sinc_len) == (128, 352, 80, 251)
        assert cfg.model.dense == (2048, 2048, 2048) and cfg.model.conv_filters == (60, 60)


class TestFingerprint:
    def test_stable(self):
        assert fingerprint(TrainConfig()) == fingerprint(TrainConfig())

    def test_sensitive(self):
        assert fingerprint(TrainConfig()) != fingerprint(TrainConfig(seed=1))

    def test_epochs_exempt(self):
        assert fingerprint(TrainConfig(epochs=3)) == fingerprint(TrainConfig(epochs=40))


    def test_int_and_float_spellings_agree(self):
        a = parse_train_config("optim.lr=1\nloss.s=30\n")
        b = parse_train_config("optim.lr=1.0\nloss.s=30.0\n")
        assert fingerprint(a) == fingerprint(b)


class TestCorpusSpec:
    def test_parse(self):
        spec = parse_corpus_spec("corpus.num_speakers=3\ncorpus.split=3:1\ncorpus.sample_rate_hz=8000\n"
                                 "voice.1.formants_hz=500,1500,2500\n")
        assert spec.num_speakers == 3 and spec.split == (3, 1) and spec.num_train == 6
        assert spec.voices[1].formants_hz == (500.0, 1500.0, 2500.0)

    def test_voice_out_of_range(self):
        with pytest.raises(ConfigParseError, match="speaker 5"):
            parse_corpus_spec("corpus.num_speakers=2\nvoice.5.noise_floor=0.1")

    def test_bad_split(self):
        with pytest.raises(ConfigParseError, match="corpus.split"):
            parse_corpus_spec("corpus.split=5:3:1")

    def test_invalid_spec(self):
        with pytest.raises(ConfigParseError):
            parse_corpus_spec("corpus.num_speakers=1")

    def test_default_voices_depend_on_seed(self):
        a = parse_corpus_spec("corpus.seed=1")
        b = parse_corpus_spec("corpus.seed=2")
        assert not np.allclose(a.voices[0].formants_hz, b.voices[0].formants_hz)
