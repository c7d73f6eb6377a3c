"""
Bit packing utilities.

Bits are packed MSB-first within each byte; a final partial byte is
zero-padded and the true bit count travels alongside the bytes.
"""

from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np

from app.core.errors import InputError


@dataclass
class Bitstream:
    """
    Packed bit sequence.

    Attributes:
        data: MSB-first packed bytes, last byte zero-padded
        bit_count: Number of meaningful bits
    """
    data: bytes
    bit_count: int

    def __post_init__(self):
        if not 0 <= self.bit_count <= 8 * len(self.data) or len(self.data) != (self.bit_count + 7) // 8:
            raise InputError(f"{len(self.data)} bytes cannot hold exactly {self.bit_count} bits")

    def bits(self) -> np.ndarray:
        return unpack_bits(self)

    def byte_symbols(self) -> np.ndarray:
        """Whole bytes only, as uint8 symbols."""
        return np.frombuffer(self.data[: self.bit_count // 8], dtype=np.uint8)


def pack_bits(bits) -> Bitstream:
    """Pack a 0/1 sequence MSB-first."""
    array = np.asarray(bits, dtype=np.uint8)
    if array.size and array.max() > 1:
        raise InputError("pack_bits expects only 0 and 1")
    return Bitstream(np.packbits(array).tobytes(), int(array.size))


def unpack_bits(stream: Bitstream) -> np.ndarray:
    """Inverse of pack_bits."""
    return np.unpackbits(np.frombuffer(stream.data, dtype=np.uint8), count=stream.bit_count)


def units_to_bits(values, width: int) -> np.ndarray:
    """
    Expand unsigned integers into their width low bits, most significant first.

    Returns a (len(values), width) uint8 matrix.
    """
    if not 1 <= width <= 64:
        raise InputError(f"unit width must be in [1, 64], got {width}")
    array = np.asarray(values, dtype=np.uint64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((array[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def bits_to_units(bits, width: int) -> np.ndarray:
    """Group a bit sequence into unsigned integers of the given width."""
    array = np.asarray(bits, dtype=np.uint64)
    if array.size % width:
        raise InputError(f"{array.size} bits do not split into {width}-bit units")
    weights = np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64)
    return (array.reshape(-1, width) * weights).sum(axis=1, dtype=np.uint64)


class BitWriter:
    """
    Accumulates units of any bit width and emits whole bytes.

    Byte-aligned writes pass straight through; otherwise up to seven
    pending bits are carried between writes.
    """

    def __init__(self, sink: Optional[BinaryIO] = None):
        self._sink = sink
        self._chunks = []
        self._pending = np.zeros(0, dtype=np.uint8)
        self._bit_count = 0

    @property
    def bit_count(self) -> int:
        return self._bit_count

    def _emit(self, data: bytes) -> None:
        if self._sink is not None:
            self._sink.write(data)
        else:
            self._chunks.append(data)

    def write_units(self, values, width: int) -> None:
        values = np.asarray(values)
        count = int(values.size)
        if count == 0:
            return
        self._bit_count += count * width
        if width == 8 and self._pending.size == 0:
            self._emit(values.astype(np.uint8).tobytes())
            return
        self.write_bits(units_to_bits(values, width).ravel(), counted=True)

    def write_bits(self, bits, counted: bool = False) -> None:
        bits = np.asarray(bits, dtype=np.uint8)
        if not counted:
            self._bit_count += int(bits.size)
        if self._pending.size:
            bits = np.concatenate([self._pending, bits])
        whole = (bits.size // 8) * 8
        if whole:
            self._emit(np.packbits(bits[:whole]).tobytes())
        self._pending = bits[whole:].copy()

    def close(self) -> Optional[Bitstream]:
        """Flush the zero-padded tail; returns the stream unless writing to a sink."""
        if self._pending.size:
            self._emit(np.packbits(self._pending).tobytes())
            self._pending = np.zeros(0, dtype=np.uint8)
        if self._sink is not None:
            return None
        return Bitstream(b"".join(self._chunks), self._bit_count)
