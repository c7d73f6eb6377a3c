"""
ADC Model

Mid-rise quantizer with clamping saturation producing unsigned codes in
[0, 2^bits - 1]. Codes span [-R, +R); values below -R map to code 0 and
values at or above +R map to the top code.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from app.core.errors import DomainError, InputError
from app.source.model import AnalogBlock, ChannelModel


logger = logging.getLogger(__name__)

# Width of the ADC used by the extractors
ADC_BITS = 12


@dataclass(frozen=True)
class AdcConfig:
    """
    ADC parameters.

    Attributes:
        full_scale: R in volts; codes span [-R, +R)
        sample_rate: Samples per second (used only for rate accounting)
        bits: Resolution; 12 for the extractors, other widths for reduced models
    """
    full_scale: float
    sample_rate: float = 55e6
    bits: int = ADC_BITS

    def __post_init__(self):
        if not (math.isfinite(self.full_scale) and self.full_scale > 0):
            raise DomainError(f"full_scale must be finite and > 0, got {self.full_scale}")
        if not self.sample_rate > 0:
            raise DomainError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not 1 <= self.bits <= 16:
            raise DomainError(f"bits must be in [1, 16], got {self.bits}")

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def max_code(self) -> int:
        return self.levels - 1

    @property
    def bin_width(self) -> float:
        return 2.0 * self.full_scale / self.levels

    def bin_edges(self, code):
        """Lower and upper voltage of a code's unsaturated interval."""
        half = self.levels // 2
        lower = (np.asarray(code, dtype=float) - half) * self.bin_width
        return lower, lower + self.bin_width

    @classmethod
    def for_model(cls, model: ChannelModel, sample_rate: float = 55e6, bits: int = ADC_BITS) -> "AdcConfig":
        """Config at the optimized digitization range for a channel."""
        return cls(full_scale=optimize_range(model, bits), sample_rate=sample_rate, bits=bits)


@dataclass
class DigitizedBlock:
    """
    Quantized samples of one channel.

    Attributes:
        channel_id: Source channel
        codes: uint16 codes in [0, adc.max_code]
        adc: Configuration that produced the codes
    """
    channel_id: int
    codes: np.ndarray
    adc: AdcConfig

    def __post_init__(self):
        if self.codes.size and int(self.codes.max()) > self.adc.max_code:
            raise InputError(f"code {int(self.codes.max())} exceeds {self.adc.max_code}")

    @property
    def length(self) -> int:
        return int(self.codes.size)

    def to_bytes(self) -> bytes:
        """Packed little-endian uint16 export."""
        return np.ascontiguousarray(self.codes, dtype="<u2").tobytes()


def _codes(values: np.ndarray, cfg: AdcConfig) -> np.ndarray:
    half = cfg.levels // 2
    # floor(v/Δ) + half keeps v = 0 exactly on the first upper-half code
    raw = np.floor(values * (half / cfg.full_scale)) + half
    return np.clip(raw, 0, cfg.max_code).astype(np.uint16)


def quantize(v: float, cfg: AdcConfig) -> int:
    """
    Quantize one voltage.

    Raises:
        InputError: If v is not finite
    """
    if not math.isfinite(v):
        raise InputError(f"cannot quantize non-finite value {v}")
    return int(_codes(np.asarray([v], dtype=float), cfg)[0])


def lsb8(code: int) -> int:
    """Eight least significant bits of a 12-bit code."""
    if not 0 <= code < (1 << ADC_BITS):
        raise InputError(f"code {code} outside [0, {(1 << ADC_BITS) - 1}]")
    return code & 0xFF


def digitize_block(block: AnalogBlock, cfg: AdcConfig) -> DigitizedBlock:
    """Vectorized quantize over a block; length is preserved."""
    samples = np.asarray(block.samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise InputError(f"non-finite sample in block {block.block_index} of channel {block.channel_id}")
    return DigitizedBlock(channel_id=block.channel_id, codes=_codes(samples, cfg), adc=cfg)


def optimize_range(model: ChannelModel, bits: int = ADC_BITS, scan_points: int = 64) -> float:
    """
    Full-scale range maximizing the worst-case conditional min-entropy.

    A logarithmic scan over [sigma_M, 32 sigma_M] locates the best bracket,
    then golden-section search refines it to a relative tolerance of 1e-3.
    Ties resolve toward the smaller range.

    Raises:
        DomainError: If the model has no quantum noise
    """
    from app.analysis.entropy import ConditionalModel, worst_case_min_entropy

    if model.sigma_q2 <= 0:
        raise DomainError("cannot optimize range for a channel without quantum noise")

    sigma_m = math.sqrt(model.sigma_m2)

    def entropy_at(full_scale: float) -> float:
        adc = AdcConfig(full_scale=full_scale, bits=bits)
        return worst_case_min_entropy(ConditionalModel(model.sigma_q2, model.sigma_e2, adc))

    grid = np.geomspace(sigma_m, 32.0 * sigma_m, scan_points)
    values = [entropy_at(float(r)) for r in grid]
    best = 0
    for i, value in enumerate(values):
        if value > values[best]:
            best = i

    full_scale, best_h = float(grid[best]), values[best]
    if 0 < best < scan_points - 1 and values[best] > values[best - 1] and values[best] > values[best + 1]:
        # golden stops when the bracket is within tol * (|a| + |b|), i.e. ~1e-3 relative
        result = minimize_scalar(
            lambda r: -entropy_at(r),
            bracket=(grid[best - 1], grid[best], grid[best + 1]),
            method="golden",
            tol=5e-4,
        )
        if -result.fun > best_h and grid[best - 1] <= result.x <= grid[best + 1]:
            full_scale, best_h = float(result.x), float(-result.fun)

    logger.debug(
        f"Optimized range ch{model.channel_id}: R={full_scale:.6g} V "
        f"({full_scale / sigma_m:.3f} sigma_M), H_min={best_h:.4f} bits"
    )
    return full_scale

