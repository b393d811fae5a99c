"""Checkpoint container: bit-exact round trips and corruption handling."""

import numpy as np
import pytest

from mrgan360.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from mrgan360.errors import CheckpointError
from mrgan360.tensor import Tensor


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "gen.L0.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "gen.L0.bias": rng.normal(size=4).astype(np.float32),
        "scalar": np.float32(2.5),
    }
    path = tmp_path / "ck.mrgw"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for name in arrays:
        assert np.asarray(arrays[name]).tobytes() == loaded[name].tobytes()


def test_accepts_tensors_and_serializes_deterministically(tmp_path):
    rng = np.random.default_rng(1)
    params = {"a": Tensor(rng.normal(size=(2, 3)), requires_grad=True),
              "b": Tensor(rng.normal(size=5))}
    p1, p2 = tmp_path / "x.mrgw", tmp_path / "y.mrgw"
    save_checkpoint(p1, params)
    save_checkpoint(p2, params)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:4] == MAGIC


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mrgw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "ck.mrgw"
    save_checkpoint(path, {"a": np.ones((4, 4), dtype=np.float32)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "ck.mrgw"
    save_checkpoint(path, {"a": np.ones(3, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_no_temp_files_left_behind(tmp_path):
    path = tmp_path / "ck.mrgw"
    save_checkpoint(path, {"a": np.zeros(2, dtype=np.float32)})
    leftovers = [p for p in tmp_path.iterdir() if p.name != "ck.mrgw"]
    assert leftovers == []
