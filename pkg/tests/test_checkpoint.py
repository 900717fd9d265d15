import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from whitenopt.optim import (
    AdamConfig,
    AdamState,
    CheckpointError,
    ShampooConfig,
    ShampooState,
    SoapState,
    deserialize_state,
    serialize_state,
    shampoo_step,
    soap_step,
)

seeds = st.integers(0, 2**32 - 1)
shapes = st.tuples(st.integers(1, 5), st.integers(1, 5))


def assert_same(a, b):
    assert type(a) is type(b)
    for name, x in vars(a).items():
        y = getattr(b, name)
        if isinstance(x, np.ndarray):
            assert x.shape == y.shape and x.tobytes() == y.tobytes(), name
        elif isinstance(x, AdamState):
            assert_same(x, y)
        else:
            assert x == y, name


def trained_shampoo(seed, shape, momentum):
    rng = np.random.default_rng(seed)
    cfg = ShampooConfig(lr=1e-2, precondition_frequency=2, preconditioner_beta=0.9, momentum_beta=momentum)
    state, p = ShampooState.zeros(shape), np.zeros(shape)
    for _ in range(3):
        p, state = shampoo_step(state, cfg, p, rng.standard_normal(shape))
    return state


def trained_soap(seed, shape):
    rng = np.random.default_rng(seed)
    cfg = ShampooConfig(lr=1e-2, preconditioner_beta=0.9)
    state, p = SoapState.zeros(shape), np.zeros(shape)
    for _ in range(3):
        p, state = soap_step(state, cfg, AdamConfig(), p, rng.standard_normal(shape))
    return state


@given(seeds, shapes, st.integers(0, 2**63))
def test_adam_round_trip(seed, shape, steps):
    rng = np.random.default_rng(seed)
    state = AdamState(rng.standard_normal(shape), rng.random(shape), steps)
    assert_same(deserialize_state(serialize_state(state)), state)


@given(seeds, shapes, st.booleans())
def test_shampoo_round_trip(seed, shape, momentum):
    state = trained_shampoo(seed, shape, 0.9 if momentum else 0.0)
    assert_same(deserialize_state(serialize_state(state)), state)


def test_fresh_shampoo_round_trip_keeps_absent_fields():
    state = ShampooState.zeros((2, 3))
    back = deserialize_state(serialize_state(state))
    assert back.inv_root_L is None and back.trace_scale is None and back.M is None
    assert_same(back, state)


@given(seeds, shapes)
def test_soap_round_trip_keeps_orthogonal_bases(seed, shape):
    state = trained_soap(seed, shape)
    back = deserialize_state(serialize_state(state))
    assert_same(back, state)
    for q in (back.Q_L, back.Q_R):
        assert np.max(np.abs(q.T @ q - np.eye(len(q)))) <= 1e-9


def test_special_values_survive():
    M = np.array([[0.0, -0.0, 5e-324, 1.7976931348623157e308]])
    state = AdamState(M, np.abs(M), 7)
    back = deserialize_state(serialize_state(state))
    assert back.M.tobytes() == M.tobytes()


def test_header_layout():
    data = serialize_state(AdamState.zeros((1, 2)))
    assert data[:4] == b"WOPT"
    assert data[4] == 1 and data[5] == 1
    assert struct.unpack("<II", data[6:14]) == (1, 2)


def test_version_mismatch_rejected():
    data = bytearray(serialize_state(AdamState.zeros((2, 2))))
    data[4] = 99
    with pytest.raises(CheckpointError, match="version 99") as err:
        deserialize_state(bytes(data))
    assert err.value.offset == 4


def test_bad_magic_rejected():
    with pytest.raises(CheckpointError, match="magic") as err:
        deserialize_state(b"NOPE" + serialize_state(AdamState.zeros((1, 1)))[4:])
    assert err.value.offset == 0


def test_unknown_tag_rejected():
    data = bytearray(serialize_state(AdamState.zeros((1, 1))))
    data[5] = 9
    with pytest.raises(CheckpointError, match="tag 9"):
        deserialize_state(bytes(data))


def test_every_truncation_rejected_with_offset():
    data = serialize_state(trained_soap(0, (2, 3)))
    for cut in range(len(data)):
        with pytest.raises(CheckpointError) as err:
            deserialize_state(data[:cut])
        assert 0 <= err.value.offset <= cut
        assert "offset" in str(err.value)


def test_trailing_bytes_rejected():
    data = serialize_state(AdamState.zeros((1, 1)))
    with pytest.raises(CheckpointError, match="trailing") as err:
        deserialize_state(data + b"\x00")
    assert err.value.offset == len(data)


def test_unserializable_type():
    with pytest.raises(TypeError):
        serialize_state({"M": 1})
