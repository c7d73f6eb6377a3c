"""
Generation Rate Accounting

A multiplexed generator's sampling-limited bit rate is the product of the
ADC sampling rate, the number of extractors running in parallel and the
bits each extractor emits per consumed sample.
"""

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Dict, List, Union

from app.core.errors import DomainError


Number = Union[int, float, str, Fraction]


def _exact(value: Number) -> Fraction:
    # Floats go through their decimal repr so 55e6 stays 55000000 exactly
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class RateModel:
    """
    Inputs of the rate product.

    Attributes:
        sampling_rate: Samples per second per channel
        n_extractors: Extractors running in parallel
        bits_per_sample: Output bits per consumed sample
    """
    sampling_rate: Fraction
    n_extractors: int
    bits_per_sample: Fraction

    def __post_init__(self):
        object.__setattr__(self, "sampling_rate", _exact(self.sampling_rate))
        object.__setattr__(self, "bits_per_sample", _exact(self.bits_per_sample))
        if self.sampling_rate <= 0:
            raise DomainError(f"sampling_rate must be > 0, got {self.sampling_rate}")
        if int(self.n_extractors) != self.n_extractors or self.n_extractors < 1:
            raise DomainError(f"n_extractors must be a positive integer, got {self.n_extractors}")
        if self.bits_per_sample <= 0:
            raise DomainError(f"bits_per_sample must be > 0, got {self.bits_per_sample}")


def exact_rate(model: RateModel) -> Fraction:
    """Rate in bits per second as an exact rational."""
    return model.sampling_rate * model.n_extractors * model.bits_per_sample


def theoretical_rate(model: RateModel) -> float:
    """Rate in bits per second."""
    return float(exact_rate(model))


# Measured configurations of the reference hardware
REFERENCE_RATE_MODELS: Dict[str, RateModel] = {
    "raw": RateModel(55_000_000, 7, Fraction(8)),
    "cmac": RateModel(50_000_000, 7, Fraction(8 * 63, 128)),
    "two_source": RateModel(52_000_000, 3, Fraction(12, 72)),
}


def reference_rows() -> List[dict]:
    """
    Rate table for the reference configurations.

    Returns:
        One row per extractor with the sampling rate in MSPS, the exact
        bits per sample and the generation rate in Gbps
    """
    rows = []
    for name, model in REFERENCE_RATE_MODELS.items():
        rate = exact_rate(model)
        rows.append({
            "extractor": name,
            "sampling_rate_msps": float(model.sampling_rate / 1_000_000),
            "extractors": model.n_extractors,
            "bits_per_sample": str(model.bits_per_sample),
            "rate_bps": float(rate),
            "rate_gbps": float(rate / 1_000_000_000),
        })
    return rows
