from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from catchvqa.container import MAGIC, read_container, read_header, write_container
from catchvqa.errors import FormatError


def test_round_trip(tmp_path):
    t = OrderedDict(a=np.arange(6.0).reshape(2, 3), b=np.array(3.5), c=np.zeros((0, 4)))
    digest = write_container(tmp_path / "x.bin", t, {"kind": "test", "n": 1})
    back, meta, chk = read_container(tmp_path / "x.bin")
    assert list(back) == ["a", "b", "c"]
    assert meta == {"kind": "test", "n": 1} and chk == digest
    for k in t:
        assert back[k].shape == t[k].shape and back[k].tobytes() == t[k].tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 4), st.integers(1, 4))))
def test_round_trip_bits(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "x.bin"
    write_container(path, {"w": arr})
    assert read_container(path)[0]["w"].tobytes() == arr.tobytes()


@pytest.mark.parametrize("where", ["magic", "header", "data"])
def test_corruption_detected(tmp_path, where):
    path = tmp_path / "x.bin"
    write_container(path, {"w": np.ones(8)}, {"k": "v"})
    raw = bytearray(path.read_bytes())
    pos = {"magic": 0, "header": 30, "data": len(raw) - 1}[where]
    raw[pos] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_container(path)


def test_truncated(tmp_path):
    path = tmp_path / "x.bin"
    write_container(path, {"w": np.ones(8)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_container(path)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        read_header(tmp_path / "nope.bin")


def test_magic_prefix(tmp_path):
    write_container(tmp_path / "x.bin", {})
    assert (tmp_path / "x.bin").read_bytes()[:8] == MAGIC
