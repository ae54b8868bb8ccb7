import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from rvos.errors import ContractError
from rvos.serialize import (load_checkpoint, save_checkpoint, tensor_from_bytes, tensor_to_bytes)


def test_record_layout():
    raw = tensor_to_bytes(np.array([[1.0, 2.0, 3.0]]))
    assert raw[:12] == struct.pack("<III", 2, 1, 3)
    assert raw[12:] == struct.pack("<3d", 1.0, 2.0, 3.0)


def test_scalar_record():
    raw = tensor_to_bytes(np.float64(7.5))
    assert raw == struct.pack("<I", 0) + struct.pack("<d", 7.5)
    assert tensor_from_bytes(raw) == 7.5


def test_truncated_record_rejected():
    raw = tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(ContractError):
        tensor_from_bytes(raw[:-3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(allow_nan=False, allow_infinity=True, width=64)))
def test_round_trip_bit_exact(x):
    back = tensor_from_bytes(tensor_to_bytes(x))
    assert back.shape == x.shape
    assert back.tobytes() == np.ascontiguousarray(x).tobytes()


def test_checkpoint_round_trip_and_sorted_keys(tmp_path):
    state = {"b.weight": np.arange(6.0).reshape(2, 3), "a.bias": np.zeros(4), "ü": np.ones(1)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert list(back) == sorted(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    raw = path.read_bytes()
    assert struct.unpack("<I", raw[:4]) == (3,)
    assert raw[8:14] == b"a.bias"
