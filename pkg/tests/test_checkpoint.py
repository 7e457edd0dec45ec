import struct

import numpy as np
import pytest

from amsincnet import checkpoint as ckpt
from amsincnet.trainer import init_state, load_checkpoint, save_checkpoint, state_tensors


def sample_blob(**kw):
    tensors = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(2.5)}
    args = dict(fingerprint="abc\nx=1\n", tensors=tensors, rng_state={"k": [1, 2]}, epoch=7)
    args.update(kw)
    return ckpt.encode(**args)


class TestContainer:
    def test_layout(self):
        blob = sample_blob()
        assert blob[:4] == b"AMSN"
        assert struct.unpack_from("<H", blob, 4)[0] == 1
        assert struct.unpack_from("<I", blob, 6)[0] == len("abc\nx=1\n")
        assert struct.unpack("<I", blob[-4:])[0] == 7

    def test_round_trip(self):
        fp, tensors, rng_state, epoch = ckpt.decode(sample_blob())
        assert fp == "abc\nx=1\n" and rng_state == {"k": [1, 2]} and epoch == 7
        np.testing.assert_array_equal(tensors["a"], np.arange(6.0).reshape(2, 3))
        assert tensors["scalar"].shape == ()

    def test_f32_storage(self):
        fp, tensors, _, _ = ckpt.decode(sample_blob(tensors={"w": np.array([0.1, 1.0])}, storage="f32"))
        np.testing.assert_array_equal(tensors["w"], np.array([0.1, 1.0], dtype=np.float32).astype(np.float64))

    def test_bad_magic(self):
        with pytest.raises(ckpt.BadMagicError):
            ckpt.decode(b"NOPE" + sample_blob()[4:])

    def test_version(self):
        blob = bytearray(sample_blob())
        blob[4:6] = struct.pack("<H", 9)
        with pytest.raises(ckpt.VersionMismatchError):
            ckpt.decode(bytes(blob))

    @pytest.mark.parametrize("cut", [5, 12, 30, -1])
    def test_truncated(self, cut):
        with pytest.raises(ckpt.TruncatedCheckpointError):
            ckpt.decode(sample_blob()[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(ckpt.CheckpointError):
            ckpt.decode(sample_blob() + b"\x00")

    def test_unknown_dtype(self):
        blob = bytearray(sample_blob(tensors={"w": np.zeros(1)}))
        # name "w" after the fingerprint and count: u16 len, name, u8 rank, u32 dim, then the tag
        tag_at = 4 + 2 + 4 + len("abc\nx=1\n") + 4 + 2 + 1 + 1 + 4
        blob[tag_at] = 7
        with pytest.raises(ckpt.CheckpointError, match="dtype tag 7"):
            ckpt.decode(bytes(blob))


class TestStateCheckpoint:
    def test_save_load_save_identical(self, tmp_path, small_config):
        state = init_state(small_config)
        state.rng.random(3)
        save_checkpoint(state, tmp_path / "a.amsn")
        save_checkpoint(load_checkpoint(tmp_path / "a.amsn"), tmp_path / "b.amsn")
        assert (tmp_path / "a.amsn").read_bytes() == (tmp_path / "b.amsn").read_bytes()

    def test_round_trip_exact(self, tmp_path, small_config):
        state = init_state(small_config)
        state.optim.v["conv0.weight"] += 0.25
        state.optim.step = 11
        state.epoch = 3
        save_checkpoint(state, tmp_path / "s.amsn")
        back = load_checkpoint(tmp_path / "s.amsn", expected=small_config)
        for k, v in state_tensors(state).items():
            np.testing.assert_array_equal(state_tensors(back)[k], v)
        assert back.epoch == 3 and back.optim.step == 11
        assert back.rng.random() == state.rng.random()
        assert back.config == small_config

    def test_fingerprint_mismatch(self, tmp_path, small_config):
        save_checkpoint(init_state(small_config), tmp_path / "s.amsn")
        with pytest.raises(ckpt.FingerprintMismatchError):
            load_checkpoint(tmp_path / "s.amsn", expected=small_config.replace(seed=99))

    def test_epochs_may_change_on_resume(self, tmp_path, small_config):
        save_checkpoint(init_state(small_config), tmp_path / "s.amsn")
        assert load_checkpoint(tmp_path / "s.amsn", expected=small_config.replace(epochs=50)).config.epochs == 50

    def test_tampered_config_text(self, tmp_path, small_config):
        save_checkpoint(init_state(small_config), tmp_path / "s.amsn")
        blob = (tmp_path / "s.amsn").read_bytes().replace(b"train.seed=5", b"train.seed=6")
        (tmp_path / "t.amsn").write_bytes(blob)
        with pytest.raises(ckpt.CheckpointError, match="does not hash"):
            load_checkpoint(tmp_path / "t.amsn")
