"""
CMAC Conditioning Extractor

AES-128 CMAC used as a vetted conditioning function. Sixteen consecutive
raw bytes of one channel form the 128-bit input; the most significant
out_bits of the tag are output and the remaining 128 - out_bits tag bits
refresh the key.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from Crypto.Cipher import AES
from Crypto.Hash import CMAC

from app.core.errors import ConfigurationError, InputError
from app.extractors.base import Extractor


logger = logging.getLogger(__name__)

BLOCK_BYTES = 16
KEY_BITS = 128

# Raw-output min-entropy per byte behind the default k = 16 * 7.897
DEFAULT_BYTE_ENTROPY = 7.897
DEFAULT_OUT_BITS = 63

_RB = 0x87
_MASK128 = (1 << 128) - 1


def aes128_encrypt(block: bytes, key: bytes) -> bytes:
    """AES-128 forward cipher on one 16-byte block."""
    if len(block) != BLOCK_BYTES or len(key) != BLOCK_BYTES:
        raise InputError(f"AES-128 needs a 16-byte block and key, got {len(block)} and {len(key)}")
    return AES.new(bytes(key), AES.MODE_ECB).encrypt(bytes(block))


def _double(value: int) -> int:
    shifted = (value << 1) & _MASK128
    return shifted ^ _RB if value >> 127 else shifted


def cmac_subkeys(key: bytes) -> Tuple[bytes, bytes]:
    """SP 800-38B subkeys K1, K2 derived from L = AES(key, 0^128)."""
    l_value = int.from_bytes(aes128_encrypt(bytes(BLOCK_BYTES), key), "big")
    k1 = _double(l_value)
    k2 = _double(k1)
    return k1.to_bytes(BLOCK_BYTES, "big"), k2.to_bytes(BLOCK_BYTES, "big")


def cmac_tag(message: bytes, key: bytes) -> bytes:
    """AES-CMAC tag of a message of any length."""
    if len(key) != BLOCK_BYTES:
        raise InputError(f"CMAC key must be 16 bytes, got {len(key)}")
    return CMAC.new(bytes(key), msg=bytes(message), ciphermod=AES).digest()


@dataclass(frozen=True)
class CmacState:
    """
    Per-channel CMAC extractor state.

    Attributes:
        key: Current 128-bit key
        out_bits: Tag bits emitted per call
        input_entropy_k: Min-entropy (bits) of one 128-bit input block
    """
    key: bytes
    out_bits: int = DEFAULT_OUT_BITS
    input_entropy_k: float = 16 * DEFAULT_BYTE_ENTROPY

    def __post_init__(self):
        if len(self.key) != BLOCK_BYTES:
            raise ConfigurationError(f"CMAC key must be 16 bytes, got {len(self.key)}")
        if not 1 <= self.out_bits < KEY_BITS:
            raise ConfigurationError(f"out_bits must be in [1, 127], got {self.out_bits}")
        if self.out_bits > math.floor(self.input_entropy_k / 2):
            raise ConfigurationError(
                f"out_bits={self.out_bits} exceeds half the input min-entropy "
                f"(k={self.input_entropy_k:.3f}); output would not be full entropy"
            )

    @property
    def refresh_bits(self) -> int:
        return KEY_BITS - self.out_bits

    @classmethod
    def from_seed(cls, seed: int, **kwargs) -> "CmacState":
        """Initial key from the first 16 bytes of SHA-256 over the seed."""
        digest = hashlib.sha256(int(seed).to_bytes(8, "big")).digest()
        return cls(key=digest[:BLOCK_BYTES], **kwargs)


def extract_cmac(input128: bytes, state: CmacState) -> Tuple[int, CmacState]:
    """
    One conditioning step.

    Returns the most significant out_bits of the tag and a state whose key
    is the tag's low (128 - out_bits) bits followed by the old key's top
    out_bits bits.

    Raises:
        InputError: If the input is not exactly 16 bytes
    """
    if len(input128) != BLOCK_BYTES:
        raise InputError(f"CMAC extractor input must be 16 bytes, got {len(input128)}")
    tag = int.from_bytes(cmac_tag(input128, state.key), "big")
    refresh = state.refresh_bits
    output = tag >> refresh
    old_key = int.from_bytes(state.key, "big")
    new_key = ((tag & ((1 << refresh) - 1)) << state.out_bits) | (old_key >> refresh)
    return output, replace(state, key=new_key.to_bytes(BLOCK_BYTES, "big"))


class CmacExtractor(Extractor):
    """Keyed CMAC conditioner with per-call key refresh."""

    sources = 1
    samples_per_unit = BLOCK_BYTES

    def __init__(self, out_bits: int = DEFAULT_OUT_BITS, input_entropy_k: float = 16 * DEFAULT_BYTE_ENTROPY):
        super().__init__("cmac")
        self.unit_bits = out_bits
        self._input_entropy_k = input_entropy_k
        # Fail at construction, not at the first block
        CmacState(key=bytes(BLOCK_BYTES), out_bits=out_bits, input_entropy_k=input_entropy_k)

    def new_state(
        self,
        channel_ids: Sequence[int],
        seed: Optional[int] = None,
        key: Optional[bytes] = None,
    ) -> CmacState:
        if key is not None:
            return CmacState(key=key, out_bits=self.unit_bits, input_entropy_k=self._input_entropy_k)
        if seed is None:
            raise ConfigurationError(f"CMAC lane for channels {list(channel_ids)} needs a key or a seed")
        return CmacState.from_seed(seed, out_bits=self.unit_bits, input_entropy_k=self._input_entropy_k)

    def extract(self, codes: Sequence[np.ndarray], state: Any) -> Tuple[np.ndarray, Any]:
        (block,) = codes
        raw = (np.asarray(block) & 0xFF).astype(np.uint8)
        if raw.size % BLOCK_BYTES:
            raise InputError(f"CMAC extractor needs a multiple of 16 samples, got {raw.size}")
        rows = raw.reshape(-1, BLOCK_BYTES)
        units = np.empty(rows.shape[0], dtype=np.uint64)
        for index, row in enumerate(rows):
            value, state = extract_cmac(row.tobytes(), state)
            units[index] = value
        return units, state
