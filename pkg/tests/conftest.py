import numpy as np
import pytest
from hypothesis import settings

from amsincnet.config import TrainConfig
from amsincnet.loss import LossConfig
from amsincnet.network import ModelConfig
from amsincnet.signal import CorpusSpec, synth_corpus

settings.register_profile("default", deadline=None)
settings.load_profile("default")

SMALL_SPEC = dict(num_speakers=3, utterances_per_speaker=4, utterance_sec=0.5, sample_rate_hz=8000, seed=4,
                  split=(3, 1), window_ms=50, overlap_ms=10)


@pytest.fixture(scope="session")
def small_corpus():
    """Three speakers, 400-sample frames at 8 kHz."""
    return synth_corpus(CorpusSpec(**SMALL_SPEC))


@pytest.fixture
def small_config():
    return TrainConfig(model=ModelConfig.tiny(sample_rate=8000), loss=LossConfig(m=0.4), batch_size=8, epochs=3,
                       batches_per_epoch=4, seed=5, eval_every=1, eval_batch=16, window_ms=50, overlap_ms=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
