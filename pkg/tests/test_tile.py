import numpy as np
import pytest

from dimcsim.tile import (DimcTile, PrecisionMode, QuantConfig, ROW_BYTES,
                          decode_elements, pack_elements, wrap_partial)


def sector(pattern):
    """32-byte payload from four 8-byte slice fills."""
    return b"".join(bytes([p]) * 8 for p in pattern)


def test_full_mask_overwrites_sector():
    tile = DimcTile()
    tile.load_input_sector(0, b"\xff" * 32, 0b1111)
    buf = tile.input_buffer()
    assert buf[:32] == b"\xff" * 32
    assert buf[32:] == bytes(96)


def test_empty_mask_is_identity():
    tile = DimcTile()
    tile.load_input_sector(1, sector([1, 2, 3, 4]), 0b1111)
    before = tile.input_buffer()
    tile.load_input_sector(3, b"\xaa" * 32, 0b0000)
    assert tile.input_buffer() == before


def test_slice_mask_selects_slices():
    # mask 0b0101 writes slices 0 and 2 of sector 1, slices 1 and 3 keep
    # their previous contents
    tile = DimcTile()
    tile.load_input_sector(1, sector([9, 9, 9, 9]), 0b1111)
    tile.load_input_sector(1, sector([0xA, 0xB, 0xC, 0xD]), 0b0101)
    buf = tile.input_buffer()
    assert buf[32:64] == sector([0xA, 9, 0xC, 9])
    assert buf[:32] == bytes(32) and buf[64:] == bytes(64)


def test_row_load_isolated_to_row():
    tile = DimcTile()
    tile.load_memory_row(31, 0, b"\x55" * 32, 0b1111)
    assert tile.memory_row(31)[:32] == b"\x55" * 32
    for r in range(31):
        assert tile.memory_row(r) == bytes(ROW_BYTES)


def test_two_sector_loads_concatenate():
    tile = DimcTile()
    lo, hi = bytes(range(32)), bytes(range(32, 64))
    tile.load_memory_row(5, 0, lo, 0b1111)
    tile.load_memory_row(5, 1, hi, 0b1111)
    assert tile.memory_row(5)[:64] == lo + hi


def test_loads_idempotent():
    tile = DimcTile()
    tile.load_memory_row(3, 2, sector([7, 0, 7, 0]), 0b1001)
    snap = tile.memory_row(3)
    tile.load_memory_row(3, 2, sector([7, 0, 7, 0]), 0b1001)
    assert tile.memory_row(3) == snap


@pytest.mark.parametrize("call, args", [
    ("load_input_sector", (4, bytes(32), 0b1111)),
    ("load_memory_row", (32, 0, bytes(32), 0b1111)),
    ("load_memory_row", (0, -1, bytes(32), 0b1111)),
    ("load_input_sector", (0, bytes(31), 0b1111)),
    ("load_input_sector", (0, bytes(32), 16)),
])
def test_load_range_errors(call, args):
    with pytest.raises(ValueError):
        getattr(DimcTile(), call)(*args)


def test_compute_zero_buffer_passes_incoming_through():
    tile = DimcTile()
    tile.load_memory_row(4, 0, b"\xff" * 32, 0b1111)
    assert tile.compute_row(4, PrecisionMode(4), incoming=5) == 5


def test_compute_single_element_identity():
    tile = DimcTile()
    tile.load_input_sector(0, b"\x01" + bytes(31), 0b1111)
    tile.load_memory_row(0, 0, b"\x01" + bytes(31), 0b1111)
    assert tile.compute_row(0, PrecisionMode(4)) == 1


def _fill(tile, rng, mode):
    """Load random input and row 0; returns the packed element vectors."""
    n = mode.elements_per_row
    lo, hi = mode.input_range()
    x = rng.integers(lo, hi + 1, n)
    lo, hi = mode.weight_range()
    w = rng.integers(lo, hi + 1, n)
    for s in range(4):
        tile.load_input_sector(s, pack_elements(x, mode.bits).tobytes()[32 * s:32 * (s + 1)], 0b1111)
        tile.load_memory_row(0, s, pack_elements(w, mode.bits).tobytes()[32 * s:32 * (s + 1)], 0b1111)
    return x, w


@pytest.mark.parametrize("bits", [1, 2, 4])
@pytest.mark.parametrize("in_signed", [False, True])
@pytest.mark.parametrize("w_signed", [False, True])
def test_compute_matches_bruteforce_dot(bits, in_signed, w_signed):
    rng = np.random.default_rng(bits * 100 + in_signed * 10 + w_signed)
    mode = PrecisionMode(bits, in_signed, w_signed)
    for trial in range(10):
        tile = DimcTile()
        x, w = _fill(tile, rng, mode)
        incoming = int(rng.integers(-(1 << 23), 1 << 23))
        # oracle: plain python dot with unbounded ints, reduced at the end
        want = wrap_partial(sum(int(a) * int(b) for a, b in zip(x, w)) + incoming)
        assert tile.compute_row(0, mode, incoming) == want


def test_incoming_offset_is_modular():
    rng = np.random.default_rng(11)
    mode = PrecisionMode(4)
    tile = DimcTile()
    _fill(tile, rng, mode)
    base = tile.compute_row(0, mode, 0)
    for a in (1, -1, 12345, PARTIAL := (1 << 23) - 1, -PARTIAL):
        assert tile.compute_row(0, mode, a) == wrap_partial(base + a)


def test_accumulator_wraps_not_saturates():
    tile = DimcTile()
    tile.load_input_sector(0, b"\x01" + bytes(31), 0b1111)
    tile.load_memory_row(0, 0, b"\x01" + bytes(31), 0b1111)
    # 1*1 on top of the most positive partial wraps to the most negative
    assert tile.compute_row(0, PrecisionMode(4), (1 << 23) - 1) == -(1 << 23)


def test_one_bit_signed_decodes_to_minus_one():
    assert list(decode_elements(b"\x03", 1, True)[:3]) == [-1, -1, 0]
    assert list(decode_elements(b"\x03", 1, False)[:3]) == [1, 1, 0]


def test_compute_does_not_mutate_state():
    rng = np.random.default_rng(5)
    tile = DimcTile()
    _fill(tile, rng, PrecisionMode(2))
    mem, buf = tile.memory_row(0), tile.input_buffer()
    tile.compute_row(0, PrecisionMode(2), 7)
    tile.compute_row_final(0, PrecisionMode(2), 7, QuantConfig(2, 4))
    assert tile.memory_row(0) == mem and tile.input_buffer() == buf


def test_final_relu_clamps_negative():
    tile = DimcTile()  # empty row: partial == incoming
    assert tile.compute_row_final(0, PrecisionMode(4), -100, QuantConfig(0, 4)) == 0


def test_final_shift_then_saturate():
    tile = DimcTile()
    assert tile.compute_row_final(0, PrecisionMode(4), 57, QuantConfig(3, 4)) == 7
    assert tile.compute_row_final(0, PrecisionMode(4), 4000, QuantConfig(4, 4)) == 15


@pytest.mark.parametrize("out_bits", [1, 2, 4])
def test_final_range(out_bits):
    rng = np.random.default_rng(out_bits)
    tile = DimcTile()
    _fill(tile, rng, PrecisionMode(4))
    for _ in range(50):
        q = QuantConfig(int(rng.integers(0, 8)), out_bits)
        incoming = int(rng.integers(-(1 << 23), 1 << 23))
        v = tile.compute_row_final(0, PrecisionMode(4), incoming, q)
        assert 0 <= v <= (1 << out_bits) - 1 <= 15


def test_mode_validation():
    with pytest.raises(ValueError):
        PrecisionMode(3)
    assert not PrecisionMode(8).dimc_supported
    with pytest.raises(ValueError):
        DimcTile().compute_row(0, PrecisionMode(8))


def test_pack_decode_roundtrip():
    rng = np.random.default_rng(2)
    for bits in (1, 2, 4):
        for signed in (False, True):
            lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
            vals = rng.integers(lo, hi + 1, 1024 // bits)
            packed = pack_elements(vals, bits)
            assert np.array_equal(decode_elements(packed.tobytes(), bits, signed), vals)
