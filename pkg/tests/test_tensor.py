import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnnflow.errors import BoundsError, ShapeError
from cnnflow.tensor import (
    ConvWeights,
    Shape3,
    Tensor,
    bit_equal,
    flatten_weights,
    index,
    unflatten_weights,
)


def test_index_examples():
    assert index(Shape3(1, 1, 1), 0, 0, 0) == 0
    assert index(Shape3(2, 3, 4), 1, 0, 0) == 12


def test_index_last_offset_by_enumeration():
    shape = Shape3(2, 3, 4)
    coords = list(itertools.product(range(2), range(3), range(4)))
    offsets = {c: i for i, c in enumerate(coords)}
    assert index(shape, 1, 2, 3) == offsets[(1, 2, 3)] == 23


@pytest.mark.parametrize("coord", [(2, 0, 0), (0, 3, 0), (0, 0, 4), (-1, 0, 0)])
def test_index_out_of_range(coord):
    with pytest.raises(BoundsError):
        index(Shape3(2, 3, 4), *coord)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_index_is_bijection(c, h, w):
    shape = Shape3(c, h, w)
    offs = sorted(index(shape, *p) for p in itertools.product(range(c), range(h), range(w)))
    assert offs == list(range(shape.size))


def test_shape_rejects_nonpositive():
    with pytest.raises(ShapeError):
        Shape3(0, 1, 1)


def test_tensor_is_immutable_and_length_checked():
    t = Tensor(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        t.data[0, 0, 0] = 1.0
    with pytest.raises(ShapeError):
        Tensor(np.zeros(5), Shape3(1, 2, 2))
    assert t.data.dtype == np.float32


def test_tensor_element_access_follows_layout():
    t = Tensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    assert t[1, 2, 3] == 23.0
    assert t.flat[index(t.shape, 1, 1, 2)] == t[1, 1, 2]


def test_flatten_identity_for_unit_kernel():
    w = np.arange(6, dtype=np.float32).reshape(6, 1, 1, 1)
    assert bit_equal(flatten_weights(w, 1, 1).reshape(-1), w.reshape(-1))


def test_flatten_single_channel_row():
    a, b, c, d = 1.5, -2.0, 3.25, 4.0
    w = np.array([[[[a, b], [c, d]]]], dtype=np.float32)
    assert flatten_weights(w, 2, 1).tolist() == [[a, b, c, d]]


def test_flatten_two_channels_by_index_formula():
    w = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2) * 1.5
    expected = np.empty(8, dtype=np.float32)
    for fi, ky, kx in itertools.product(range(2), range(2), range(2)):
        expected[fi * 4 + ky * 2 + kx] = w[0, fi, ky, kx]
    got = flatten_weights(w, 2, 2)
    assert bit_equal(got[0], expected)
    # channel-0 block, then channel-1 block
    assert bit_equal(got[0, :4], w[0, 0].reshape(-1))
    assert bit_equal(got[0, 4:], w[0, 1].reshape(-1))


def test_flatten_accepts_flat_buffer_and_rejects_bad_length():
    w = np.arange(18, dtype=np.float32)
    assert flatten_weights(w, 3, 2).shape == (1, 18)
    with pytest.raises(ShapeError):
        flatten_weights(np.zeros(10, dtype=np.float32), 3, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_flatten_roundtrip(out, cin, k, seed):
    w = np.random.default_rng(seed).standard_normal((out, cin, k, k)).astype(np.float32)
    flat = flatten_weights(w, k, cin)
    for f, c, ky, kx in [(out - 1, cin - 1, k - 1, k - 1), (0, cin // 2, k // 2, 0)]:
        assert flat[f, c * k * k + ky * k + kx] == w[f, c, ky, kx]
    assert bit_equal(unflatten_weights(flat, k, cin), w)


def test_conv_weights_invariants(rng):
    w = ConvWeights(rng.standard_normal((3, 2, 3, 3)), np.zeros(3))
    assert w.w_flat.shape == (3, 18)
    assert w.w4d.size == w.w_flat.size
    assert w.nbytes == (54 + 3) * 4
    with pytest.raises(ShapeError):
        ConvWeights(np.zeros((3, 2, 3, 3)), np.zeros(2))
