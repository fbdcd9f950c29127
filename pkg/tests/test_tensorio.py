import struct
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from freqadapt import tensorio
from freqadapt.errors import FormatError

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=4)


@given(hnp.arrays(np.float64, shapes, elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_real_round_trip_bit_exact(a):
    b = tensorio.decode_tensor(tensorio.encode_tensor(a))
    assert b.dtype == np.float64 and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


@given(hnp.arrays(np.complex128, shapes))
def test_complex_round_trip_bit_exact(a):
    b = tensorio.decode_tensor(tensorio.encode_tensor(a))
    assert b.dtype == np.complex128
    assert a.tobytes() == b.tobytes()


def test_header_layout():
    blob = tensorio.encode_tensor(np.arange(6.0).reshape(2, 3))
    assert blob[:4] == b"F2FT"
    assert blob[4:7] == bytes([1, 1, 2])
    assert struct.unpack("<2Q", blob[7:23]) == (2, 3)
    assert len(blob) == 23 + 6 * 8
    assert struct.unpack("<d", blob[23:31]) == (0.0,)
    assert tensorio.encode_tensor(np.zeros(1, dtype=complex))[5] == 2


@pytest.mark.parametrize("mutate,code", [
    (lambda b: b"XXXX" + b[4:], "bad_magic"),
    (lambda b: b[:4] + bytes([9]) + b[5:], "bad_version"),
    (lambda b: b[:5] + bytes([7]) + b[6:], "bad_dtype"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corrupt_tensor(mutate, code):
    blob = tensorio.encode_tensor(np.ones((2, 2)))
    with pytest.raises(FormatError) as info:
        tensorio.decode_tensor(mutate(blob))
    assert info.value.code == code


def test_load_names_file(tmp_path):
    path = tmp_path / "bad.f2ft"
    path.write_bytes(b"nope")
    with pytest.raises(FormatError) as info:
        tensorio.load_tensor(path)
    assert "bad.f2ft" in str(info.value)
    with pytest.raises(FormatError) as info:
        tensorio.load_tensor(tmp_path / "missing.f2ft")
    assert info.value.code == "io"


def test_container_round_trip(tmp_path):
    entries = OrderedDict([("a.weight", np.random.default_rng(0).standard_normal((3, 2))),
                           ("ünïcode", np.array([1 + 2j])), ("scalar", np.array(3.5))])
    path = tmp_path / "c.f2fc"
    tensorio.save_container(path, entries)
    back = tensorio.load_container(path)
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].tobytes() == np.asarray(entries[k]).tobytes()


def test_container_corrupt():
    blob = tensorio.encode_container({"x": np.zeros(2)})
    with pytest.raises(FormatError):
        tensorio.decode_container(b"F2FT" + blob[4:])
    with pytest.raises(FormatError):
        tensorio.decode_container(blob[:-1])


@given(st.binary(max_size=200))
def test_bytes_tensor_round_trip(raw):
    assert tensorio.tensor_to_bytes(tensorio.bytes_to_tensor(raw)) == raw


def test_tensor_to_bytes_rejects_non_bytes():
    with pytest.raises(FormatError):
        tensorio.tensor_to_bytes(np.array([0.5]))
