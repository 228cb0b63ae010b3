"""Bit-exact functional model of the digital in-memory-compute tile.

The tile holds 32 weight rows of 1024 bits and a 1024-bit input buffer.
Rows and buffer are addressed in 256-bit sectors, and each sector in four
64-bit slices gated by a valid mask, matching the width of one vector
register transfer. A compute is a full-row dot product between the input
buffer and one selected weight row, accumulated into a signed 24-bit
partial sum with two's-complement wraparound.

Bit order is little-endian throughout: byte 0 of a row holds bits [0, 8),
and element k of a 1024-bit vector occupies bits [k*w, (k+1)*w) for
element width w. Decoded element arrays therefore line up index-for-index
with the flattened tensors the layer mapper packs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROWS = 32
ROW_BITS = 1024
ROW_BYTES = ROW_BITS // 8
SECTORS = 4
SECTOR_BYTES = ROW_BYTES // SECTORS
SLICE_BYTES = 8
SLICES_PER_SECTOR = SECTOR_BYTES // SLICE_BYTES

PARTIAL_BITS = 24
PARTIAL_MIN = -(1 << (PARTIAL_BITS - 1))
PARTIAL_MAX = (1 << (PARTIAL_BITS - 1)) - 1


def wrap_partial(value: int) -> int:
    """Reduce an integer into the signed 24-bit accumulator range.

    The accumulator wraps on overflow instead of saturating, so reduction
    is plain two's-complement truncation to 24 bits.
    """
    return ((value - PARTIAL_MIN) & ((1 << PARTIAL_BITS) - 1)) + PARTIAL_MIN


def value_range(bits: int, signed: bool) -> tuple[int, int]:
    """Inclusive value range of one element at the given width."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass(frozen=True)
class PrecisionMode:
    """Element width and per-operand signedness for in-memory MACs.

    Widths 1, 2 and 4 run on the tile (1024, 512 or 256 MACs per compute).
    Widths 8 and 16 are representable only so that layer descriptors can
    carry precisions the DIMC path has to reject; tile operations refuse
    them. Signedness is independent per operand side, so signed weights
    against unsigned activations (and any other mix) are legal.
    """

    bits: int = 4
    input_signed: bool = True
    weight_signed: bool = True

    def __post_init__(self):
        if self.bits not in (1, 2, 4, 8, 16):
            raise ValueError(f"unsupported element width: {self.bits}")

    @property
    def dimc_supported(self) -> bool:
        return self.bits <= 4

    @property
    def elements_per_row(self) -> int:
        return ROW_BITS // self.bits

    def input_range(self) -> tuple[int, int]:
        return value_range(self.bits, self.input_signed)

    def weight_range(self) -> tuple[int, int]:
        return value_range(self.bits, self.weight_signed)


@dataclass(frozen=True)
class QuantConfig:
    """Requantization applied by a final compute: ReLU, arithmetic right
    shift, then unsigned saturation to ``out_bits``. The result is padded
    into a 4-bit nibble regardless of ``out_bits``."""

    right_shift: int = 0
    out_bits: int = 4

    def __post_init__(self):
        if self.right_shift < 0:
            raise ValueError(f"right_shift must be >= 0, got {self.right_shift}")
        if self.out_bits not in (1, 2, 4):
            raise ValueError(f"out_bits must be 1, 2 or 4, got {self.out_bits}")

    @property
    def max_value(self) -> int:
        return (1 << self.out_bits) - 1


def decode_elements(data, bits: int, signed: bool) -> np.ndarray:
    """Unpack a little-endian bit vector into an int64 element array."""
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if bits == 4:
        out = np.empty(raw.size * 2, dtype=np.int64)
        out[0::2] = raw & 0xF
        out[1::2] = raw >> 4
    elif bits == 2:
        out = np.empty(raw.size * 4, dtype=np.int64)
        for j in range(4):
            out[j::4] = (raw >> (2 * j)) & 0x3
    elif bits == 1:
        out = np.unpackbits(raw, bitorder="little").astype(np.int64)
    else:
        raise ValueError(f"cannot decode {bits}-bit elements")
    if signed:
        out -= (out >= (1 << (bits - 1))) * (1 << bits)
    return out


def pack_elements(values: np.ndarray, bits: int) -> np.ndarray:
    """Pack an integer element array into little-endian bytes (two's
    complement within each element field). Inverse of decode_elements."""
    if bits not in (1, 2, 4):
        raise ValueError(f"cannot pack {bits}-bit elements")
    per_byte = 8 // bits
    vals = np.asarray(values, dtype=np.int64)
    if vals.size % per_byte:
        vals = np.concatenate([vals, np.zeros(per_byte - vals.size % per_byte, dtype=np.int64)])
    u = (vals & ((1 << bits) - 1)).astype(np.uint8)
    if bits == 1:
        return np.packbits(u, bitorder="little")
    out = np.zeros(vals.size // per_byte, dtype=np.uint8)
    for j in range(per_byte):
        out |= u[j::per_byte] << (bits * j)
    return out


class DimcTile:
    """One compute tile: weight memory, input buffer, and the row MAC.

    Loads mutate the tile in place; computes never do. A tile starts with
    every bit cleared, which the layer mapper relies on for sectors it
    leaves untouched.
    """

    def __init__(self):
        self._memory = np.zeros((ROWS, ROW_BYTES), dtype=np.uint8)
        self._input = np.zeros(ROW_BYTES, dtype=np.uint8)
        # Version counters invalidate the decoded-element caches, which keep
        # repeated computes against an unchanged row or buffer cheap.
        self._row_version = [0] * ROWS
        self._input_version = 0
        self._row_cache: dict = {}
        self._input_cache: dict = {}

    # -- loads ------------------------------------------------------------

    def load_input_sector(self, sector: int, data, valid_mask: int) -> None:
        """Replace mask-selected 64-bit slices of one 256-bit input sector.

        Slice i of the sector is overwritten by bytes [8*i, 8*i+8) of
        ``data`` iff bit i of ``valid_mask`` is set; masked-out slices and
        all other sectors keep their previous contents.
        """
        self._check_sector(sector)
        buf = self._as_sector_bytes(data)
        mask = self._check_mask(valid_mask)
        self._masked_write(self._input, sector * SECTOR_BYTES, buf, mask)
        self._input_version += 1

    def load_memory_row(self, row: int, sector: int, data, valid_mask: int) -> None:
        """Same slice/mask semantics as load_input_sector, applied to the
        256-bit window ``sector`` of weight row ``row``."""
        self._check_row(row)
        self._check_sector(sector)
        buf = self._as_sector_bytes(data)
        mask = self._check_mask(valid_mask)
        self._masked_write(self._memory[row], sector * SECTOR_BYTES, buf, mask)
        self._row_version[row] += 1

    # -- computes ---------------------------------------------------------

    def compute_row(self, row: int, mode: PrecisionMode, incoming: int = 0) -> int:
        """Dot product of the input buffer with weight row ``row`` plus the
        incoming partial, wrapped into the 24-bit accumulator range.

        The whole 1024-bit row participates: elements the mapper never
        loaded stay zero and contribute nothing. State is not modified.
        """
        self._check_row(row)
        if not mode.dimc_supported:
            raise ValueError(f"tile computes support at most 4-bit elements, got {mode.bits}")
        x = self._decoded_input(mode)
        w = self._decoded_row(row, mode)
        return wrap_partial(int(np.dot(x, w)) + incoming)

    def compute_row_final(self, row: int, mode: PrecisionMode, incoming: int,
                          quant: QuantConfig) -> int:
        """compute_row followed by ReLU, right shift and saturation.

        Returns the quantized value as an unsigned nibble in [0, 15].
        """
        p = self.compute_row(row, mode, incoming)
        if p < 0:
            return 0
        q = p >> quant.right_shift
        return q if q <= quant.max_value else quant.max_value

    # -- readback ---------------------------------------------------------

    def memory_row(self, row: int) -> bytes:
        self._check_row(row)
        return self._memory[row].tobytes()

    def input_buffer(self) -> bytes:
        return self._input.tobytes()

    # -- internals --------------------------------------------------------

    @staticmethod
    def _masked_write(target: np.ndarray, offset: int, buf: np.ndarray, mask: int) -> None:
        for i in range(SLICES_PER_SECTOR):
            if mask >> i & 1:
                lo = offset + i * SLICE_BYTES
                target[lo:lo + SLICE_BYTES] = buf[i * SLICE_BYTES:(i + 1) * SLICE_BYTES]

    def _decoded_input(self, mode: PrecisionMode) -> np.ndarray:
        key = (mode.bits, mode.input_signed)
        hit = self._input_cache.get(key)
        if hit is not None and hit[0] == self._input_version:
            return hit[1]
        dec = decode_elements(self._input, mode.bits, mode.input_signed)
        self._input_cache[key] = (self._input_version, dec)
        return dec

    def _decoded_row(self, row: int, mode: PrecisionMode) -> np.ndarray:
        key = (row, mode.bits, mode.weight_signed)
        hit = self._row_cache.get(key)
        if hit is not None and hit[0] == self._row_version[row]:
            return hit[1]
        dec = decode_elements(self._memory[row], mode.bits, mode.weight_signed)
        self._row_cache[key] = (self._row_version[row], dec)
        return dec

    @staticmethod
    def _check_row(row: int) -> None:
        if not 0 <= row < ROWS:
            raise ValueError(f"row {row} out of range [0, {ROWS - 1}]")

    @staticmethod
    def _check_sector(sector: int) -> None:
        if not 0 <= sector < SECTORS:
            raise ValueError(f"sector {sector} out of range [0, {SECTORS - 1}]")

    @staticmethod
    def _check_mask(mask: int) -> int:
        if not 0 <= mask <= 0xF:
            raise ValueError(f"valid mask {mask} out of range [0, 15]")
        return mask

    @staticmethod
    def _as_sector_bytes(data) -> np.ndarray:
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        if buf.size != SECTOR_BYTES:
            raise ValueError(f"sector payload must be {SECTOR_BYTES} bytes, got {buf.size}")
        return buf
