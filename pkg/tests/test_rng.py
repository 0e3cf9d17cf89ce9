import numpy as np
from hypothesis import given, settings, strategies as st

from gremlab.rng import chunk_map, derive_stream, stream_key


@given(st.integers(0, 2 ** 64 - 1), st.text(max_size=20), st.integers(0, 10 ** 6))
@settings(max_examples=50, deadline=None)
def test_streams_reproducible(seed, tag, index):
    a = derive_stream(seed, tag, index).random(4)
    b = derive_stream(seed, tag, index).random(4)
    np.testing.assert_array_equal(a, b)


def test_streams_distinct():
    keys = {stream_key(12345, t, i) for t in ("a", "b", "ab") for i in range(50)}
    assert len(keys) == 150
    # tag/index boundary is unambiguous
    assert stream_key(1, "a1", 0) != stream_key(1, "a", 1)


def _draw(i):
    return float(derive_stream(7, "chunk", i).random())


def test_chunk_map_independent_of_workers():
    assert chunk_map(_draw, range(6), workers=1) == chunk_map(_draw, range(6), workers=2)
