import struct

import numpy as np
import pytest

from despecular.checkpoint import MAGIC, CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from despecular.network import ModelConfig, build_model, forward


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig(base_width=4, window=4, seed=11))


def test_save_load_save_is_byte_identical(model, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_roundtrip_preserves_outputs(model):
    again = loads(dumps(model))
    assert again.config == model.config
    x = np.random.default_rng(0).random((3, 12, 12))
    assert forward(again, x).tobytes() == forward(model, x).tobytes()


def test_header_layout(model):
    data = dumps(model)
    assert data[:4] == MAGIC
    version, n = struct.unpack_from("<II", data, 4)
    assert version == 1
    assert data[12 : 12 + n].decode() == model.config.to_json()
    (count,) = struct.unpack_from("<I", data, 12 + n)
    assert count == len(model.named_tensors())


def test_float32_roundtrip(model):
    m32 = model.astype(np.float32)
    again = loads(dumps(m32))
    assert again.dtype == np.float32
    assert dumps(again) == dumps(m32)
    assert len(dumps(m32)) < len(dumps(model))


def test_bad_magic(model):
    data = b"XXXX" + dumps(model)[4:]
    with pytest.raises(CheckpointError, match="magic"):
        loads(data)


def test_unknown_version(model):
    data = bytearray(dumps(model))
    data[4:8] = struct.pack("<I", 9)
    with pytest.raises(CheckpointError, match="version 9"):
        loads(bytes(data))


@pytest.mark.parametrize("cut", [2, 10, 200, -3])
def test_truncation_names_offset(model, cut):
    data = dumps(model)
    with pytest.raises(CheckpointError, match=r"truncated checkpoint.*offset \d+"):
        loads(data[:cut])


def test_trailing_bytes(model):
    with pytest.raises(CheckpointError, match="trailing"):
        loads(dumps(model) + b"\0")


def test_config_tensor_shape_mismatch(model):
    data = dumps(model)
    old = b'"base_width":4'
    assert old in data
    with pytest.raises(CheckpointError, match="expected shape"):
        loads(data.replace(old, b'"base_width":8', 1))


def test_corrupt_config_block(model):
    data = dumps(model).replace(b'"base_width":4', b'"base_width":x', 1)
    with pytest.raises(CheckpointError, match="config"):
        loads(data)
