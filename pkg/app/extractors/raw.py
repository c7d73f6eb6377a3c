"""
Raw Bit Extraction

Keeps the eight least significant bits of every 12-bit code and discards
the remaining four.
"""

from typing import Any, Sequence, Tuple, Union

import numpy as np

from app.extractors.base import Extractor
from app.source.adc import DigitizedBlock


def extract_raw(codes: Union[DigitizedBlock, np.ndarray]) -> bytes:
    """One byte per sample: code mod 256."""
    array = codes.codes if isinstance(codes, DigitizedBlock) else np.asarray(codes)
    return (array & 0xFF).astype(np.uint8).tobytes()


class RawExtractor(Extractor):
    """Stateless 8-LSB extractor."""

    sources = 1
    samples_per_unit = 1
    unit_bits = 8

    def __init__(self):
        super().__init__("raw")

    def extract(self, codes: Sequence[np.ndarray], state: Any) -> Tuple[np.ndarray, Any]:
        (block,) = codes
        return (np.asarray(block) & 0xFF).astype(np.uint64), state
