"""Round-trip and corruption tests for the binary checkpoint format."""

import struct

import numpy as np
import pytest

from spikedep import checkpoint, snn


def test_roundtrip_bitwise(tmp_path):
    model = snn.build_mlp([4, 6, 3], snn.LifConfig(), seed=1)
    path = str(tmp_path / "m.ckpt")
    checkpoint.save(path, model.params())
    loaded = checkpoint.load(path)
    for name, arr in model.params().items():
        assert (loaded[name] == arr).all()
    assert list(loaded) == [n for n, _ in model.param_index]


def test_load_into_model_replaces_params(tmp_path):
    model = snn.build_mlp([4, 6, 3], snn.LifConfig(), seed=1)
    theta = model.flat_params()
    path = str(tmp_path / "m.ckpt")
    checkpoint.save(path, model.params())
    model.load_flat(np.zeros_like(theta))
    checkpoint.load_into_model(path, model)
    assert (model.flat_params() == theta).all()


def test_header_layout_exact(tmp_path):
    path = str(tmp_path / "one.ckpt")
    checkpoint.save(path, {"w": np.array([[1.0, 2.0]])})
    raw = open(path, "rb").read()
    assert raw[:4] == b"SDEP"
    version, count = struct.unpack("<II", raw[4:12])
    assert version == 1 and count == 1
    name_len = struct.unpack("<I", raw[12:16])[0]
    assert raw[16 : 16 + name_len] == b"w"
    rank = struct.unpack("<I", raw[17:21])[0]
    assert rank == 2
    dims = struct.unpack("<II", raw[21:29])
    assert dims == (1, 2)
    vals = np.frombuffer(raw[29:], dtype="<f8")
    assert vals.tolist() == [1.0, 2.0]


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.load(str(p))


def test_truncated_payload(tmp_path):
    path = str(tmp_path / "t.ckpt")
    checkpoint.save(path, {"w": np.arange(4.0)})
    raw = open(path, "rb").read()
    p = tmp_path / "trunc.ckpt"
    p.write_bytes(raw[:-9])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.load(str(p))


def test_shape_mismatch_names_parameter(tmp_path):
    model = snn.build_mlp([4, 6, 3], snn.LifConfig(), seed=1)
    params = {k: v.copy() for k, v in model.params().items()}
    params["2.weight"] = np.zeros((5, 5))
    path = str(tmp_path / "wrong.ckpt")
    checkpoint.save(path, params)
    with pytest.raises(checkpoint.CheckpointError, match="2.weight"):
        checkpoint.load_into_model(path, model)


def test_missing_parameter_named(tmp_path):
    model = snn.build_mlp([4, 6, 3], snn.LifConfig(), seed=1)
    params = dict(model.params())
    del params["0.bias"]
    path = str(tmp_path / "miss.ckpt")
    checkpoint.save(path, params)
    with pytest.raises(checkpoint.CheckpointError, match="0.bias"):
        checkpoint.load_into_model(path, model)


def test_describe(tmp_path):
    model = snn.build_mlp([4, 6, 3], snn.LifConfig(), seed=1)
    path = str(tmp_path / "m.ckpt")
    checkpoint.save(path, model.params())
    info = checkpoint.describe(path)
    assert info["parameter_count"] == 4
    assert info["total_scalars"] == model.num_params
    assert info["parameters"][0]["name"] == "0.weight"
    assert info["parameters"][0]["shape"] == [6, 4]
