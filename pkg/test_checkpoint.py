"""
Tests for the checkpoint container (checkpoint.py)
"""

import json
import struct

import numpy as np
import pytest

from checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint, split_namespace


def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "param/encoder.conv0.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "param/projector.bn1.gamma": np.ones(8, dtype=np.float64),
        "buffer/projector.bn1.running_mean": np.zeros(8, dtype=np.float32),
        "adam.m/projector.bn1.gamma": np.arange(8, dtype=np.float64),
        "scalar": np.array(3, dtype=np.int64),
    }


def test_round_trip(tmp_path):
    tensors = sample_tensors()
    meta = {"epoch": 2, "iteration": 17, "config": {"seed": 0}}
    path = save_checkpoint(str(tmp_path / "run" / "model.ckpt"), tensors, meta)
    loaded, loaded_meta = load_checkpoint(path)
    assert loaded_meta == meta
    assert sorted(loaded) == sorted(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        np.testing.assert_array_equal(loaded[name], arr)


def test_header_layout(tmp_path):
    tensors = sample_tensors()
    path = save_checkpoint(str(tmp_path / "model.ckpt"), tensors, {})
    raw = open(path, "rb").read()
    assert raw[:8] == MAGIC
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + length])
    names = [entry["name"] for entry in header["tensors"]]
    assert names == sorted(tensors)
    offset = 0
    for entry in header["tensors"]:
        assert entry["offset"] == offset
        assert entry["nbytes"] == tensors[entry["name"]].nbytes
        offset += entry["nbytes"]
    assert len(raw) == 16 + length + offset


def test_rejects_bad_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.ckpt"))

    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(bogus))

    path = save_checkpoint(str(tmp_path / "model.ckpt"), sample_tensors(), {})
    raw = open(path, "rb").read()
    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(truncated))


def test_split_namespace():
    tensors = sample_tensors()
    params = split_namespace(tensors, "param")
    assert sorted(params) == ["encoder.conv0.weight", "projector.bn1.gamma"]
    assert split_namespace(tensors, "adam.v") == {}
