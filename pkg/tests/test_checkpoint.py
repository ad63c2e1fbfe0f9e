import json
import struct

import numpy as np
import pytest

from layercollapse.checkpoint import (decode_checkpoint, encode_checkpoint, load_checkpoint,
                                      save_checkpoint)
from layercollapse.errors import FormatError
from layercollapse.nn import Conv2dLayer, FlattenLayer, ModelGraph, init_model

ARCH = {"input_dim": 3, "layers": [
    {"type": "block", "hidden": 6, "out": 5, "batchnorm": True, "dropout": 0.1},
    {"type": "prelu"}, {"type": "relu"}, {"type": "linear", "out": 2}]}


def _model():
    m = init_model(ARCH, seed=4)
    m["block0"].bn.running_mean[...] = np.linspace(-1, 1, 6)
    m.metadata["seed"] = "4"
    return m


def test_round_trip_within_float32(tmp_path):
    m = _model()
    path = tmp_path / "m.lckp"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.names() == m.names() and back.metadata == m.metadata
    for k, p in m.parameters().items():
        np.testing.assert_array_equal(back.parameters()[k].data, p.data.astype(np.float32))
    np.testing.assert_array_equal(back["block0"].bn.running_mean,
                                  m["block0"].bn.running_mean.astype(np.float32))
    assert back["block0"].drop.p == 0.1
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_allclose(back.predict(x), m.predict(x), rtol=1e-5, atol=1e-5)
    # a decoded model re-encodes to the same bytes
    assert encode_checkpoint(back) == path.read_bytes()


def test_conv_round_trip():
    rng = np.random.default_rng(1)
    m = ModelGraph([("c", Conv2dLayer(rng.standard_normal((2, 1, 3, 3)), rng.standard_normal(2), 1)),
                    ("f", FlattenLayer())], input_shape=(1, 4, 4))
    back = decode_checkpoint(encode_checkpoint(m))
    assert back.input_shape == (1, 4, 4) and back["c"].padding == 1
    np.testing.assert_array_equal(back["c"].K.data, m["c"].K.data.astype(np.float32))


def _hand_built():
    meta = {"input_shape": None, "metadata": {},
            "layers": [{"name": "lin", "type": "linear", "in_features": 1, "out_features": 1}],
            "tensors": [{"name": "lin.W", "shape": [1, 1]}, {"name": "lin.b", "shape": [1]}]}
    mb = json.dumps(meta).encode()
    out = b"LCKP" + struct.pack("<II", 1, len(mb)) + mb
    out += struct.pack("<I", 5) + b"lin.W" + struct.pack("<III", 2, 1, 1) + struct.pack("<f", 2.5)
    out += struct.pack("<I", 5) + b"lin.b" + struct.pack("<II", 1, 1) + struct.pack("<f", -1.0)
    return out


def test_hand_built_checkpoint_decodes():
    m = decode_checkpoint(_hand_built())
    assert m["lin"].W.data.tolist() == [[2.5]] and m["lin"].b.data.tolist() == [-1.0]


def test_corruptions_are_format_errors():
    good = encode_checkpoint(_model())
    with pytest.raises(FormatError) as e:
        decode_checkpoint(b"XXXX" + good[4:])
    assert e.value.offset == 0 and e.value.category == "format"
    with pytest.raises(FormatError) as e:
        decode_checkpoint(good[:4] + struct.pack("<I", 9) + good[8:])
    assert e.value.offset == 4
    with pytest.raises(FormatError, match="truncated"):
        decode_checkpoint(good[:-3])
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(good + b"\x00")
    with pytest.raises(FormatError):
        decode_checkpoint(b"")
    bad = _hand_built().replace(struct.pack("<III", 2, 1, 1), struct.pack("<III", 2, 1, 2))
    with pytest.raises(FormatError, match="shape"):
        decode_checkpoint(bad)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.lckp")
