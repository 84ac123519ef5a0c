import struct

import numpy as np
import pytest

from vcpcfg.core.checkpoint import Checkpoint, load_checkpoint, round_to_storage, save_checkpoint
from vcpcfg.core.optimizer import AdamState
from vcpcfg.errors import DataError


@pytest.fixture
def checkpoint(rng):
    params = {"grammar.rule_out": rng.standard_normal((4, 3)), "image.bias": rng.standard_normal(3),
              "scale": np.asarray(0.25)}
    state = AdamState(first={k: rng.standard_normal(np.shape(v)) for k, v in params.items()},
                      second={k: rng.random(np.shape(v)) for k, v in params.items()}, step=17)
    return Checkpoint(params=params, optimizer=state, epoch=3,
                      history=[{"epoch": 0, "valid_criterion": 9.5}, {"epoch": 1, "valid_criterion": 7.25}],
                      config={"mode": "grounded", "z_dim": 2}, vocab=["dog", "(", "é"])


class TestRoundTrip:
    def test_everything_survives(self, tmp_path, checkpoint):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint)
        loaded = load_checkpoint(path)
        stored = round_to_storage(checkpoint.params)
        assert loaded.params.keys() == stored.keys()
        for name in stored:
            np.testing.assert_array_equal(loaded.params[name], stored[name])
            assert loaded.params[name].shape == np.shape(checkpoint.params[name])
        for name in checkpoint.optimizer.first:
            np.testing.assert_array_equal(loaded.optimizer.first[name],
                                          round_to_storage(checkpoint.optimizer.first)[name])
        assert loaded.optimizer.step == 17
        assert loaded.epoch == 3
        assert loaded.history == checkpoint.history
        assert loaded.config == checkpoint.config
        assert loaded.vocab == checkpoint.vocab

    def test_second_save_is_byte_identical(self, tmp_path, checkpoint):
        save_checkpoint(tmp_path / "a.ckpt", checkpoint)
        save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(16))
        with pytest.raises(DataError, match="byte offset 0"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path, checkpoint):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, checkpoint)
        data = bytearray(path.read_bytes())
        data[7:11] = struct.pack("<I", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(DataError, match="version 99"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, checkpoint):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, checkpoint)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(DataError, match="truncated .* at byte offset"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, checkpoint):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, checkpoint)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError, match="trailing bytes"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "absent.ckpt")
