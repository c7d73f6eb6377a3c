"""
File format utilities.

Bitstream files (binary):
    8-byte magic ``QRNGBITS``, uint16 LE format version, MSB-first packed
    payload, uint64 LE bit count trailer.

Bitstream files (ASCII):
    '0'/'1' characters, newline-terminated lines.

Code files (``.u16``): headerless little-endian uint16 ADC codes.
Analog files (``.f64``): headerless little-endian float64 voltages.
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Iterator, Optional, Union

import numpy as np

from app.core.config import config
from app.core.errors import InputError
from app.extractors.bits import Bitstream
from app.models.schemas import RunManifest


logger = logging.getLogger(__name__)

MAGIC = b"QRNGBITS"
HEADER = struct.Struct("<8sH")
TRAILER = struct.Struct("<Q")
ASCII_LINE = 64
CHUNK_BYTES = 1 << 20

PathLike = Union[str, Path]


def _ascii(bits: np.ndarray) -> str:
    return (np.asarray(bits, dtype=np.uint8) + ord("0")).tobytes().decode("ascii")


class BitstreamFileWriter:
    """
    Streaming writer for binary bitstream files.

    Acts as a byte sink for BitWriter; the bit count is written on close.
    """

    def __init__(self, path: PathLike):
        self._path = Path(path)
        self._file = open(self._path, "wb")
        self._file.write(HEADER.pack(MAGIC, config.FORMAT_VERSION))
        self._payload = 0

    @property
    def path(self) -> Path:
        return self._path

    def write(self, data: bytes) -> int:
        self._file.write(data)
        self._payload += len(data)
        return len(data)

    def close(self, bit_count: int) -> None:
        """Write the trailer; bit_count must fit the payload exactly."""
        if (bit_count + 7) // 8 != self._payload:
            self._file.close()
            raise InputError(f"bit count {bit_count} does not match {self._payload} payload bytes")
        self._file.write(TRAILER.pack(bit_count))
        self._file.close()
        logger.info(f"Wrote {bit_count} bits to {self._path}")

    def abort(self) -> None:
        """Close and remove the partial file."""
        self._file.close()
        self._path.unlink(missing_ok=True)


class AsciiBitWriter:
    """Byte sink that renders packed bytes as '0'/'1' text lines."""

    def __init__(self, stream):
        self._stream = stream
        self._pending = ""
        self._bytes = 0

    def write(self, data: bytes) -> int:
        self._bytes += len(data)
        self._pending += _ascii(np.unpackbits(np.frombuffer(data, dtype=np.uint8)))
        while len(self._pending) >= ASCII_LINE:
            self._stream.write(self._pending[:ASCII_LINE] + "\n")
            self._pending = self._pending[ASCII_LINE:]
        return len(data)

    def close(self, bit_count: int) -> None:
        """Flush, dropping the zero padding of the final byte."""
        padding = 8 * self._bytes - bit_count
        if padding:
            self._pending = self._pending[: len(self._pending) - padding]
        if self._pending:
            self._stream.write(self._pending + "\n")
            self._pending = ""


def write_bitstream(path: PathLike, stream: Bitstream) -> None:
    """Write a whole bitstream in the binary format."""
    writer = BitstreamFileWriter(path)
    writer.write(stream.data)
    writer.close(stream.bit_count)


def write_ascii(path: PathLike, stream: Bitstream) -> None:
    """Write a whole bitstream in the ASCII format."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        bits = stream.bits()
        for start in range(0, bits.size, ASCII_LINE):
            f.write(_ascii(bits[start:start + ASCII_LINE]) + "\n")


def is_bitstream_file(path: PathLike) -> bool:
    with open(path, "rb") as f:
        return f.read(len(MAGIC)) == MAGIC


def read_bitstream(path: PathLike) -> Bitstream:
    """
    Read a binary bitstream file.

    Raises:
        InputError: On a bad magic, unknown version or inconsistent trailer
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size + TRAILER.size:
        raise InputError(f"{path}: too short for a bitstream file ({len(raw)} bytes)")
    magic, version = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: not a bitstream file (bad magic)")
    if version != config.FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    (bit_count,) = TRAILER.unpack_from(raw, len(raw) - TRAILER.size)
    payload = raw[HEADER.size:len(raw) - TRAILER.size]
    if (bit_count + 7) // 8 != len(payload):
        raise InputError(f"{path}: trailer says {bit_count} bits but payload has {len(payload)} bytes")
    return Bitstream(payload, bit_count)


def read_ascii(path: PathLike) -> Bitstream:
    """Read an ASCII bitstream; whitespace is ignored."""
    text = "".join(Path(path).read_text(encoding="ascii").split())
    if text.strip("01"):
        raise InputError(f"{path}: ASCII bitstream may contain only '0' and '1'")
    bits = np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")
    return Bitstream(np.packbits(bits).tobytes(), int(bits.size))


def load_bits(path: PathLike, fmt: Optional[str] = None) -> Bitstream:
    """
    Read a bitstream in any supported format.

    Args:
        path: Input file
        fmt: 'bin', 'ascii' or 'raw'; sniffed when None (magic header, then
            '0'/'1' text, else raw bytes)
    """
    path = Path(path)
    if fmt is None:
        if is_bitstream_file(path):
            fmt = "bin"
        else:
            head = path.read_bytes()[:CHUNK_BYTES]
            fmt = "ascii" if head and not head.translate(None, b"01 \r\n\t") else "raw"
    if fmt == "bin":
        return read_bitstream(path)
    if fmt == "ascii":
        return read_ascii(path)
    if fmt == "raw":
        data = path.read_bytes()
        return Bitstream(data, 8 * len(data))
    raise InputError(f"unknown bitstream format '{fmt}'")


def write_array(f: BinaryIO, values: np.ndarray, dtype: str) -> None:
    f.write(np.ascontiguousarray(values, dtype=dtype).tobytes())


def iter_codes(path: PathLike, block_samples: int, max_code: int = 4095) -> Iterator[np.ndarray]:
    """
    Stream a code file in blocks of block_samples codes.

    Raises:
        InputError: On an odd byte count or an out-of-range code
    """
    with open(path, "rb") as f:
        while True:
            chunk = f.read(2 * block_samples)
            if not chunk:
                return
            if len(chunk) % 2:
                raise InputError(f"{path}: code files hold 2-byte samples, found a trailing odd byte")
            codes = np.frombuffer(chunk, dtype="<u2").astype(np.uint16)
            if codes.size and int(codes.max()) > max_code:
                raise InputError(f"{path}: code {int(codes.max())} exceeds {max_code}; not a 12-bit code file")
            yield codes


def read_codes(path: PathLike) -> np.ndarray:
    blocks = list(iter_codes(path, CHUNK_BYTES // 2))
    return np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.uint16)


def read_analog(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise InputError(f"{path}: analog files hold 8-byte samples")
    return np.frombuffer(raw, dtype="<f8").copy()


def sha256_file(path: PathLike) -> str:
    """Hex SHA-256 digest, read in chunks."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(CHUNK_BYTES), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(out: PathLike) -> Path:
    """Manifest location for an output file or directory."""
    out = Path(out)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def write_manifest(path: PathLike, manifest: RunManifest) -> None:
    Path(path).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote manifest {path}")


def read_manifest(path: PathLike) -> RunManifest:
    try:
        return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValueError as e:
        raise InputError(f"{path}: invalid manifest: {e}") from e
