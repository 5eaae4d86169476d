import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glfc.errors import CheckpointError, FormatError
from glfc.io import (Volume, checkpoint_bytes, checkpoint_load, checkpoint_parse,
                     checkpoint_save, gvol_bytes, gvol_parse, gvol_read, gvol_write, load_weights,
                     read_kv, write_kv)
from glfc.meunet import build_model, miniature_config


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=3), st.integers(0, 10_000))
def test_gvol_roundtrip(dims, seed):
    rng = np.random.default_rng(seed)
    v = Volume(rng.normal(0, 1000, dims).astype(np.float32), (0.5, 1.0, 2.5))
    back = gvol_parse(gvol_bytes(v))
    assert back.voxels.tobytes() == v.voxels.tobytes() and back.spacing == v.spacing


def test_gvol_header_layout():
    raw = gvol_bytes(Volume(np.zeros((2, 3), np.float32)))
    assert raw[:4] == b"GVL1"
    assert struct.unpack_from("<IIII", raw, 4) == (2, 2, 3, 1)
    assert len(raw) == 4 + 4 + 8 + 4 + 12 + 24


def _good():
    return bytearray(gvol_bytes(Volume(np.ones((2, 2), np.float32))))


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b.__setitem__(0, ord("X")), 0),
    (lambda b: b.__setitem__(slice(4, 8), struct.pack("<I", 7)), 4),
    (lambda b: b.__setitem__(slice(8, 12), struct.pack("<I", 0)), 8),
    (lambda b: b.__setitem__(slice(16, 20), struct.pack("<I", 9)), 16),
])
def test_gvol_corruption_is_positioned(mutate, offset):
    b = _good()
    mutate(b)
    with pytest.raises(FormatError) as exc:
        gvol_parse(bytes(b))
    assert exc.value.offset == offset
    assert f"offset {offset}" in str(exc.value)


def test_gvol_truncated_and_trailing():
    b = bytes(_good())
    with pytest.raises(FormatError):
        gvol_parse(b[:-1])
    with pytest.raises(FormatError):
        gvol_parse(b + b"\0")


def test_gvol_nonfinite_payload():
    b = _good()
    b[-4:] = struct.pack("<f", float("nan"))
    with pytest.raises(FormatError):
        gvol_parse(bytes(b))


def test_gvol_file_roundtrip(tmp_path):
    v = Volume(np.arange(24, dtype=np.float32).reshape(2, 3, 4), (1.0, 1.0, 3.0))
    gvol_write(v, tmp_path / "a.gvol")
    assert gvol_read(tmp_path / "a.gvol").voxels.tobytes() == v.voxels.tobytes()
    assert not list(tmp_path.glob("*.tmp*"))


def test_checkpoint_roundtrip_and_load(tmp_path):
    model = build_model(miniature_config(), seed=1)
    checkpoint_save(model, tmp_path / "m.ckpt")
    other = build_model(miniature_config(), seed=2)
    load_weights(other, checkpoint_load(tmp_path / "m.ckpt"))
    a, b = model.state_dict(), other.state_dict()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_checkpoint_mismatch_names_tensor():
    model = build_model(miniature_config())
    weights = model.state_dict()
    name = next(iter(weights))
    del weights[name]
    with pytest.raises(CheckpointError) as exc:
        load_weights(model, weights)
    assert name in str(exc.value)


def test_checkpoint_bad_magic_and_truncation():
    raw = checkpoint_bytes({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(FormatError):
        checkpoint_parse(b"XCKPT1" + raw[6:])
    with pytest.raises(FormatError):
        checkpoint_parse(raw[:-2])


def test_kv_roundtrip(tmp_path):
    write_kv(tmp_path / "c.cfg", {"lr": 0.02, "arch": "meunet"})
    assert read_kv(tmp_path / "c.cfg") == {"lr": "0.02", "arch": "meunet"}
