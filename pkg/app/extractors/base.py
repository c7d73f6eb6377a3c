"""
Randomness Extractor Base Class

This module defines the abstract base class for all extractors. An
extractor consumes 12-bit ADC codes from one or two channels and produces
fixed-width output units.
"""

from abc import ABC, abstractmethod
from fractions import Fraction
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError


class Extractor(ABC):
    """
    Abstract base class for randomness extractors.

    Subclasses declare their geometry as class attributes:
        sources: Channels consumed per invocation (1 or 2)
        samples_per_unit: Samples taken from each source per output unit
        unit_bits: Width of one output unit
    """

    sources: int = 1
    samples_per_unit: int = 1
    unit_bits: int = 8

    def __init__(self, name: str):
        """
        Initialize the extractor.

        Args:
            name: Extractor identifier name
        """
        self._name = name

    @property
    def name(self) -> str:
        """Get the extractor name."""
        return self._name

    @property
    def bits_per_sample(self) -> Fraction:
        """Output bits per consumed sample, counting every source."""
        return Fraction(self.unit_bits, self.samples_per_unit * self.sources)

    def new_state(
        self,
        channel_ids: Sequence[int],
        seed: Optional[int] = None,
        key: Optional[bytes] = None,
    ) -> Any:
        """
        Create the per-lane state.

        Args:
            channel_ids: Channels feeding one lane
            seed: Seed from which key material may be derived
            key: Optional explicit key material

        Returns:
            State object, or None for stateless extractors
        """
        return None

    def validate_block(self, block_samples: int) -> None:
        """Check that a per-channel block splits into whole units."""
        if block_samples < 1 or block_samples % self.samples_per_unit:
            raise ConfigurationError(
                f"{self.name} extractor needs block_samples to be a positive multiple "
                f"of {self.samples_per_unit}, got {block_samples}"
            )

    @abstractmethod
    def extract(self, codes: Sequence[np.ndarray], state: Any) -> Tuple[np.ndarray, Any]:
        """
        Extract output units from one block per source.

        Args:
            codes: One uint16 code array per source, equal lengths
            state: Lane state from new_state or a previous call

        Returns:
            Tuple of (uint64 units, next state)
        """
        pass

    def get_status(self) -> Dict[str, Any]:
        """
        Get the extractor geometry.

        Returns:
            Dictionary with extractor information
        """
        return {
            "extractor": self.name,
            "sources": self.sources,
            "samples_per_unit": self.samples_per_unit,
            "unit_bits": self.unit_bits,
            "bits_per_sample": str(self.bits_per_sample),
        }
