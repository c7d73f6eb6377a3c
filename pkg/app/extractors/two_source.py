"""
Two-Source Extractor

Single-bit extractor over two independent weak sources: the GF(2) inner
product of two 36-bit strings, each packed from three consecutive 12-bit
codes of a different channel (most significant code first).
"""

from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, InputError
from app.extractors.base import Extractor


CODES_PER_INPUT = 3
CODE_BITS = 12


@dataclass(frozen=True)
class TwoSourceCfg:
    """Input width per source."""
    input_bits: int = CODES_PER_INPUT * CODE_BITS

    def __post_init__(self):
        if self.input_bits % CODE_BITS:
            raise ConfigurationError(f"input_bits must be a multiple of {CODE_BITS}, got {self.input_bits}")


def pack_codes(codes, codes_per_input: int = CODES_PER_INPUT) -> np.ndarray:
    """Concatenate consecutive 12-bit codes into uint64 inputs, first code on top."""
    array = np.asarray(codes, dtype=np.uint64)
    if array.size % codes_per_input:
        raise InputError(f"{array.size} codes do not split into groups of {codes_per_input}")
    groups = array.reshape(-1, codes_per_input)
    packed = np.zeros(groups.shape[0], dtype=np.uint64)
    for column in range(codes_per_input):
        packed = (packed << np.uint64(CODE_BITS)) | groups[:, column]
    return packed


def parity(values) -> np.ndarray:
    """Parity of the set bits of each uint64."""
    v = np.asarray(values, dtype=np.uint64).copy()
    for shift in (32, 16, 8, 4, 2, 1):
        v ^= v >> np.uint64(shift)
    return (v & np.uint64(1)).astype(np.uint8)


def extract_two_source(
    x: int,
    y: int,
    x_channel: Optional[int] = None,
    y_channel: Optional[int] = None,
    cfg: TwoSourceCfg = TwoSourceCfg(),
) -> int:
    """
    Inner product of x and y over GF(2).

    Raises:
        ConfigurationError: If both inputs come from the same channel
        InputError: If an input is wider than cfg.input_bits
    """
    if x_channel is not None and x_channel == y_channel:
        raise ConfigurationError(f"two-source inputs must come from distinct channels, both are {x_channel}")
    limit = 1 << cfg.input_bits
    if not (0 <= x < limit and 0 <= y < limit):
        raise InputError(f"two-source inputs must be {cfg.input_bits}-bit values")
    return bin(x & y).count("1") & 1


class TwoSourceExtractor(Extractor):
    """Inner-product extractor over a pair of channels."""

    sources = 2
    samples_per_unit = CODES_PER_INPUT
    unit_bits = 1

    def __init__(self):
        super().__init__("two_source")

    def new_state(
        self,
        channel_ids: Sequence[int],
        seed: Optional[int] = None,
        key: Optional[bytes] = None,
    ) -> Any:
        first, second = channel_ids
        if first == second:
            raise ConfigurationError(f"channel {first} cannot be paired with itself")
        return None

    def extract(self, codes: Sequence[np.ndarray], state: Any) -> Tuple[np.ndarray, Any]:
        first, second = codes
        if len(first) != len(second):
            raise InputError(f"paired blocks differ in length: {len(first)} vs {len(second)}")
        x = pack_codes(first)
        y = pack_codes(second)
        return parity(x & y).astype(np.uint64), state
