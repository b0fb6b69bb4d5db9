import json
import struct

import numpy as np
import pytest

from eegharmony.harness.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from eegharmony.rvgg import ModelSpec, build_rvgg


@pytest.fixture
def model():
    spec = ModelSpec(input_shape=(1, 6, 32), scale=8, use_attention=True, attention_D1=4, attention_K=4)
    return build_rvgg(spec, rng=3, dtype=np.float64)


def read_header(path):
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[8:12])
    return raw, json.loads(raw[12:12 + n]), 12 + n


def test_round_trip_exact(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, {"seed": 7})
    loaded, header = load_checkpoint(path, dtype=np.float64)
    assert header["config"] == {"seed": 7}
    assert loaded.spec == model.spec
    assert list(loaded.params) == list(model.params)
    for k in model.params:
        assert np.array_equal(loaded.params[k], model.params[k])
    X = np.random.default_rng(0).normal(size=(2, 6, 32))
    coords = np.random.default_rng(1).uniform(0, 1, size=(6, 2))
    np.testing.assert_array_equal(loaded.forward(X, coords), model.forward(X, coords))


def test_layout(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw, header, start = read_header(path)
    assert raw[:8] == MAGIC
    assert header["schema_version"] == 1
    total = 0
    for t in header["tensors"]:
        assert t["dtype"] == "<f8"
        assert t["offset"] == total
        assert t["nbytes"] == 8 * int(np.prod(t["shape"]))
        arr = np.frombuffer(raw[start + t["offset"]:start + t["offset"] + t["nbytes"]], "<f8")
        np.testing.assert_array_equal(arr.reshape(t["shape"]), model.params[t["name"]])
        total += t["nbytes"]
    assert len(raw) == start + total


def test_float32_loading(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model.astype(np.float32), path)
    loaded, _ = load_checkpoint(path)
    assert loaded.dtype == np.float32
    for k, v in model.astype(np.float32).params.items():
        assert np.array_equal(loaded.params[k], v)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unknown_schema(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw, header, start = read_header(path)
    header["schema_version"] = 99
    h = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<I", len(h)) + h + raw[start:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_no_temp_file_left(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.ckpt"]
