import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weak2mask import rle


def test_known_encoding_row_major():
    mask = np.array([[0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 0]], bool)
    assert rle.encode(mask) == {"size": [3, 4], "counts": [1, 2, 2, 2, 5]}
    assert rle.encode(np.ones((2, 3), bool)) == {"size": [2, 3], "counts": [0, 6]}
    assert rle.encode(np.zeros((2, 3), bool)) == {"size": [2, 3], "counts": [6]}


def test_counts_alternate_from_zero():
    mask = np.array([[1, 0, 1]], bool)
    assert rle.encode(mask)["counts"] == [0, 1, 1, 1]


@settings(max_examples=200, deadline=None)
@given(arrays(bool, st.tuples(st.integers(0, 20), st.integers(0, 20))))
def test_roundtrip(mask):
    encoded = rle.encode(mask)
    assert sum(encoded["counts"]) == mask.size
    assert np.array_equal(rle.decode(encoded), mask)


@pytest.mark.parametrize("bad", [
    {"size": [2, 2], "counts": [3]},
    {"size": [2, 2], "counts": [-1, 5]},
    {"counts": [4]},
    {"size": [2, 2], "counts": "abc"},
])
def test_decode_rejects_malformed(bad):
    with pytest.raises(ValueError):
        rle.decode(bad)
