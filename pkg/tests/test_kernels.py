import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragfuzz.kernels import _pykernels

try:
    from ragfuzz.kernels import _kernels
    HAVE_COMPILED = True
except ImportError:
    _kernels = None
    HAVE_COMPILED = False

DATA = Path(__file__).parent / "data"

BACKENDS = [_pykernels] + ([_kernels] if HAVE_COMPILED else [])


@pytest.mark.parametrize("impl", BACKENDS)
def test_embed_matches_golden_file(impl):
    golden = json.loads((DATA / "embedder_golden.json").read_text())
    for text, expected in golden["vectors"].items():
        got = impl.embed_text(text, golden["dims"], golden["seed"])
        assert list(got) == expected


@pytest.mark.parametrize("impl", BACKENDS)
def test_embed_deterministic_and_normalised(impl):
    a = impl.embed_text("SETUP starts an RTSP session.", 128, 7)
    b = impl.embed_text("SETUP starts an RTSP session.", 128, 7)
    assert a == b
    norm = sum(v * v for v in a)
    assert norm == pytest.approx(1.0, abs=1e-12)


@pytest.mark.skipif(not HAVE_COMPILED, reason="extension not built")
@settings(max_examples=200, deadline=None)
@given(st.text(min_size=0, max_size=80), st.integers(0, 2**32 - 1))
def test_backends_embed_identical(text, seed):
    assert _kernels.embed_text(text, 64, seed) == _pykernels.embed_text(text, 64, seed)


@pytest.mark.skipif(not HAVE_COMPILED, reason="extension not built")
@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=1, max_size=64), st.data())
def test_backends_byte_ops_identical(data, draw):
    bit = draw.draw(st.integers(0, len(data) * 8 - 1))
    pos = draw.draw(st.integers(0, len(data) - 1))
    delta = draw.draw(st.integers(-35, 35))
    start = draw.draw(st.integers(0, len(data) - 1))
    length = draw.draw(st.integers(1, len(data) - start))
    dest = draw.draw(st.integers(0, len(data)))
    token = draw.draw(st.binary(max_size=8))
    for name, args in [
        ("hash64", (data, 2326)),
        ("bitflip", (data, bit)),
        ("byteflip", (data, pos)),
        ("arith_byte", (data, pos, delta)),
        ("block_duplicate", (data, start, length, dest)),
        ("block_delete", (data, start, length)),
        ("insert_bytes", (data, pos, token)),
    ]:
        assert getattr(_kernels, name)(*args) == getattr(_pykernels, name)(*args), name


@pytest.mark.parametrize("impl", BACKENDS)
def test_bitmap_counts_new_bits_once(impl):
    bitmap = bytearray(32)
    assert impl.update_bitmap(bitmap, [0, 1, 9, 9, 255], 255) == 4
    assert impl.update_bitmap(bitmap, [0, 1], 255) == 0
    assert impl.update_bitmap(bitmap, [256], 255) == 0  # wraps onto bit 0
    popcount = sum(bin(b).count("1") for b in bitmap)
    assert popcount == 4


@pytest.mark.parametrize("impl", BACKENDS)
def test_dot_of_normalised_self_is_one(impl):
    v = impl.embed_text("PAUSE does not free server resources.", 64, 3)
    assert impl.dot(v, v) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_byte_ops_semantics(impl):
    assert impl.bitflip(b"\x00", 0) == b"\x01"
    assert impl.byteflip(b"\x0f\xff", 1) == b"\x0f\x00"
    assert impl.arith_byte(b"\x10", 0, -17) == b"\xff"
    assert impl.block_duplicate(b"abcd", 1, 2, 0) == b"bcabcd"
    assert impl.block_delete(b"abcd", 1, 2) == b"ad"
    assert impl.insert_bytes(b"ad", 1, b"bc") == b"abcd"
